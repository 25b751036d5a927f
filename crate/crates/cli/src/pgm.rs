//! Binary (P5) PGM encoding of `[0, 1]` planes.

pub fn encode(plane: &[f64], h: usize, w: usize) -> Vec<u8> {
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(plane.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}
