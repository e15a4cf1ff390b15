//! Apodization window functions shared by transmit and receive weighting.

use serde::{Deserialize, Serialize};

/// Aperture weighting window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Rectangular,
    Hann,
    Hamming,
}

impl WindowKind {
    /// Evaluate the window at normalized offset `u` from the aperture
    /// center, where `|u| = 1` is the aperture edge. Outside the aperture
    /// the weight is 0.
    pub fn evaluate(self, u: f64) -> f64 {
        let u = u.abs();
        if u > 1.0 {
            return 0.0;
        }
        match self {
            WindowKind::Rectangular => 1.0,
            WindowKind::Hann => 0.5 * (1.0 + (std::f64::consts::PI * u).cos()),
            WindowKind::Hamming => 0.54 + 0.46 * (std::f64::consts::PI * u).cos(),
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "rectangular" => Some(WindowKind::Rectangular),
            "hann" => Some(WindowKind::Hann),
            "hamming" => Some(WindowKind::Hamming),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            WindowKind::Rectangular => "rectangular",
            WindowKind::Hann => "hann",
            WindowKind::Hamming => "hamming",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hann_is_one_at_center_zero_at_edge() {
        assert_eq!(WindowKind::Hann.evaluate(0.0), 1.0);
        assert!(WindowKind::Hann.evaluate(1.0).abs() < 1e-15);
        assert_eq!(WindowKind::Hann.evaluate(1.5), 0.0);
    }

    #[test]
    fn hamming_edge_value() {
        let w = WindowKind::Hamming.evaluate(1.0);
        assert!((w - 0.08).abs() < 1e-12);
    }

    #[test]
    fn windows_are_symmetric() {
        for kind in [WindowKind::Rectangular, WindowKind::Hann, WindowKind::Hamming] {
            for i in 0..=10 {
                let u = i as f64 / 10.0;
                assert_eq!(kind.evaluate(u), kind.evaluate(-u));
            }
        }
    }
}
