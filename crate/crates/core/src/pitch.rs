//! MIDI note numbers and frequencies.

pub const A4_HZ: f64 = 440.0;
pub const A4_MIDI: f64 = 69.0;

pub fn midi_to_hz(midi: f64) -> f64 {
    A4_HZ * 2f64.powf((midi - A4_MIDI) / 12.0)
}

pub fn hz_to_midi(hz: f64) -> f64 {
    A4_MIDI + 12.0 * (hz / A4_HZ).log2()
}

/// Signed distance in cents from `reference` to `hz`.
pub fn cents_between(reference: f64, hz: f64) -> f64 {
    1200.0 * (hz / reference).log2()
}
