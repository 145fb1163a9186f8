//! Inspection-only rendering of codebook-0 tokens as a sine-tone WAV.

use arcscore::synth::TokenGrid;

pub const SAMPLE_RATE: u32 = 16_000;
/// Each token row lasts 100 ms.
pub const SAMPLES_PER_ROW: usize = 1_600;
const AMPLITUDE: f64 = 0.3;
const BASE_HZ: f64 = 110.0;

/// Tone for a voiced id: semitone steps above 110 Hz. Silence is `None`.
pub fn token_frequency(tokens: &TokenGrid, id: u16) -> Option<f64> {
    (id != tokens.codec.silence_token).then(|| BASE_HZ * 2f64.powf(f64::from(id) / 12.0))
}

/// 16-bit little-endian mono PCM WAV bytes.
pub fn render_wav(tokens: &TokenGrid) -> Vec<u8> {
    let n = tokens.rows() * SAMPLES_PER_ROW;
    let data_len = (n * 2) as u32;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&SAMPLE_RATE.to_le_bytes());
    out.extend_from_slice(&(SAMPLE_RATE * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    let mut phase = 0.0f64;
    for row in 0..tokens.rows() {
        let freq = token_frequency(tokens, tokens.get(row, 0));
        for _ in 0..SAMPLES_PER_ROW {
            let x = match freq {
                Some(f) => {
                    phase = (phase + f / f64::from(SAMPLE_RATE)).fract();
                    AMPLITUDE * (std::f64::consts::TAU * phase).sin()
                }
                None => 0.0,
            };
            out.extend_from_slice(&((x * f64::from(i16::MAX)).round() as i16).to_le_bytes());
        }
    }
    out
}
