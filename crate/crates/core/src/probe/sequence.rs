use ndarray::Array2;

use crate::error::{Error, Result};
use crate::synth::PseudoVideo;

/// One 1 Hz step of the interleaved sequence: a time marker followed by the frame's visual tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameElement {
    /// Absolute second encoded by the time marker.
    pub second: usize,
    /// `M × D_f` visual tokens.
    pub visual: Array2<f64>,
}

/// Instruction prefix followed by time-ordered `(marker, frame)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct InterleavedSequence {
    pub instruction_id: usize,
    pub instruction_tokens: Vec<usize>,
    pub elements: Vec<FrameElement>,
}

/// Kind of each flattened position, in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Instruction(usize),
    TimeMarker(usize),
    Visual { second: usize, token: usize },
}

impl InterleavedSequence {
    pub fn num_frames(&self) -> usize {
        self.elements.len()
    }

    pub fn tokens_per_frame(&self) -> usize {
        self.elements.first().map_or(0, |e| e.visual.nrows())
    }

    /// `|inst| + T·(1 + M)`.
    pub fn len(&self) -> usize {
        self.instruction_tokens.len() + self.elements.len() * (1 + self.tokens_per_frame())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn layout(&self) -> Vec<Slot> {
        let mut out: Vec<Slot> = self.instruction_tokens.iter().map(|&i| Slot::Instruction(i)).collect();
        for e in &self.elements {
            out.push(Slot::TimeMarker(e.second));
            out.extend((0..e.visual.nrows()).map(|token| Slot::Visual { second: e.second, token }));
        }
        out
    }

    /// Position of frame `i`'s first visual token.
    pub fn visual_offset(&self, frame: usize) -> usize {
        self.instruction_tokens.len() + frame * (1 + self.tokens_per_frame()) + 1
    }
}

/// Builds `[T_inst, τ_1, V_1, …, τ_T, V_T]` for frames starting at second `first_second`.
pub fn build_interleaved_sequence(
    video: &PseudoVideo,
    instruction_id: usize,
    instruction_len: usize,
    first_second: usize,
) -> Result<InterleavedSequence> {
    if video.num_frames() == 0 {
        return Err(Error::InvalidInput("cannot build a sequence from an empty video".into()));
    }
    Ok(InterleavedSequence {
        instruction_id,
        instruction_tokens: (0..instruction_len).map(|i| instruction_id * instruction_len + i).collect(),
        elements: (0..video.num_frames())
            .map(|t| FrameElement {
                second: first_second + t,
                visual: video.frame(t).to_owned(),
            })
            .collect(),
    })
}
