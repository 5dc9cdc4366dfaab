//! Barycentric-coordinate scatter of learned weights as SVG.
//!
//! The `S` fiducial vertices form a regular polygon inscribed in a circle of
//! radius [`RADIUS`] around ([`CENTER`], [`CENTER`]) in file units, vertex 0
//! at the top and the rest clockwise. Datapoint `i` sits at
//! `sum_s lambda_is vertex_s`.

use std::fmt::Write;

pub const SIZE: f64 = 400.0;
pub const CENTER: f64 = 200.0;
pub const RADIUS: f64 = 160.0;

/// Vertex `s` of `count` in file units (y grows downward).
pub fn vertex(s: usize, count: usize) -> (f64, f64) {
    let angle = std::f64::consts::FRAC_PI_2 - 2.0 * std::f64::consts::PI * s as f64 / count as f64;
    (CENTER + RADIUS * angle.cos(), CENTER - RADIUS * angle.sin())
}

/// Position of a weight vector.
pub fn position(weights: &[f64]) -> (f64, f64) {
    let count = weights.len();
    weights.iter().enumerate().fold((0.0, 0.0), |(x, y), (s, &w)| {
        let (vx, vy) = vertex(s, count);
        (x + w * vx, y + w * vy)
    })
}

pub fn scatter_svg(weights: &[Vec<f64>]) -> String {
    let count = weights.first().map_or(0, Vec::len);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let verts: Vec<(f64, f64)> = (0..count).map(|s| vertex(s, count)).collect();
    let outline: Vec<String> = verts.iter().map(|(x, y)| format!("{x},{y}")).collect();
    let _ = writeln!(
        out,
        r#"<polygon class="simplex" points="{}" fill="none" stroke="black"/>"#,
        outline.join(" ")
    );
    for (s, (x, y)) in verts.iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<text class="vertex" x="{x}" y="{y}" font-size="14" text-anchor="middle">atom {s}</text>"#
        );
    }
    for (i, w) in weights.iter().enumerate() {
        let (x, y) = position(w);
        let _ = writeln!(
            out,
            r#"<circle class="datapoint" id="d{i}" cx="{x}" cy="{y}" r="3" fill="steelblue"/>"#
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vertex_layout() {
        let (x, y) = vertex(0, 3);
        assert!((x - CENTER).abs() < 1e-12 && (y - (CENTER - RADIUS)).abs() < 1e-12);
        // Clockwise on screen: vertex 1 of a square is on the right.
        let (x, y) = vertex(1, 4);
        assert!((x - (CENTER + RADIUS)).abs() < 1e-12 && (y - CENTER).abs() < 1e-12);
    }

    #[test]
    fn two_atoms_give_a_segment() {
        let (a, b) = (vertex(0, 2), vertex(1, 2));
        assert_eq!(position(&[1.0, 0.0]), a);
        assert_eq!(position(&[0.0, 1.0]), b);
        let (x, _) = position(&[0.3, 0.7]);
        assert!((x - CENTER).abs() < 1e-9);
    }

    #[test]
    fn circles_follow_weights() {
        let w = vec![vec![0.2, 0.3, 0.5], vec![1.0, 0.0, 0.0]];
        let svg = scatter_svg(&w);
        assert_eq!(svg.matches("<circle").count(), 2);
        let (x, y) = position(&w[0]);
        assert!(svg.contains(&format!(r#"cx="{x}" cy="{y}""#)));
    }
}
