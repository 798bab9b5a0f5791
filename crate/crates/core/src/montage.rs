//! Built-in electrode montages on an idealized spherical head.
//!
//! Axes: +x towards the right ear, +y towards the nasion, +z through Cz.
//! Positions are generated from the 10-10 construction: the equatorial
//! ring (Fpz, Fp2, AF8, ... , Oz) sits at polar angle 90° in 18° azimuth
//! steps, midline electrodes sit at 22.5° polar steps from Cz, and every
//! other electrode divides the circular arc through its row's left ring
//! point, midline point and right ring point into eight equal steps.

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub const MONTAGE_10_20_19: &str = "10-20-19";
pub const MONTAGE_10_10_61: &str = "10-10-61";

const LABELS_10_20_19: [&str; 19] = [
    "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8", "T7", "C3", "Cz", "C4", "T8", "P7", "P3", "Pz", "P4",
    "P8", "O1", "O2",
];

const LABELS_10_10_61: [&str; 61] = [
    "Fp1", "Fpz", "Fp2", //
    "AF7", "AF3", "AFz", "AF4", "AF8", //
    "F7", "F5", "F3", "F1", "Fz", "F2", "F4", "F6", "F8", //
    "FT7", "FC5", "FC3", "FC1", "FCz", "FC2", "FC4", "FC6", "FT8", //
    "T7", "C5", "C3", "C1", "Cz", "C2", "C4", "C6", "T8", //
    "TP7", "CP5", "CP3", "CP1", "CPz", "CP2", "CP4", "CP6", "TP8", //
    "P7", "P5", "P3", "P1", "Pz", "P2", "P4", "P6", "P8", //
    "PO7", "PO3", "POz", "PO4", "PO8", //
    "O1", "Oz", "O2",
];

/// Default small-Laplacian centres of the classification stack: the 19
/// positions of the 10-20 system.
pub const LAPLACIAN_CENTERS_10_20: [&str; 19] = LABELS_10_20_19;

/// Alternative Laplacian centres confined to the sensorimotor strip.
pub const SENSORIMOTOR_CENTERS: [&str; 19] = [
    "FC5", "FC3", "FC1", "FC2", "FC4", "FC6", //
    "C5", "C3", "C1", "Cz", "C2", "C4", "C6", //
    "CP5", "CP3", "CP1", "CP2", "CP4", "CP6",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Montage {
    pub name: String,
    pub labels: Vec<String>,
    /// Unit vectors.
    pub positions: Vec<Vector3<f64>>,
}

impl Montage {
    pub fn standard(name: &str) -> Result<Self> {
        let labels: &[&str] = match name {
            MONTAGE_10_20_19 => &LABELS_10_20_19,
            MONTAGE_10_10_61 => &LABELS_10_10_61,
            other => {
                return Err(Error::config(format!(
                    "unknown montage {other:?} (available: {MONTAGE_10_20_19}, {MONTAGE_10_10_61})"
                )))
            }
        };
        let positions = labels
            .iter()
            .map(|l| position_10_10(l))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            name: name.to_string(),
            labels: labels.iter().map(|s| s.to_string()).collect(),
            positions,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Unit-sphere position of a 10-10 electrode label.
pub fn electrode_position(label: &str) -> Result<Vector3<f64>> {
    position_10_10(label)
}

fn spherical(polar_deg: f64, azimuth_deg: f64) -> Vector3<f64> {
    let (t, p) = (polar_deg.to_radians(), azimuth_deg.to_radians());
    Vector3::new(t.sin() * p.cos(), t.sin() * p.sin(), t.cos())
}

/// Azimuth on the equatorial ring for a ring label.
fn ring_azimuth(label: &str) -> Option<f64> {
    const RING: [(&str, f64); 20] = [
        ("T8", 0.0),
        ("FT8", 18.0),
        ("F8", 36.0),
        ("AF8", 54.0),
        ("Fp2", 72.0),
        ("Fpz", 90.0),
        ("Fp1", 108.0),
        ("AF7", 126.0),
        ("F7", 144.0),
        ("FT7", 162.0),
        ("T7", 180.0),
        ("TP7", 198.0),
        ("P7", 216.0),
        ("PO7", 234.0),
        ("O1", 252.0),
        ("Oz", 270.0),
        ("O2", 288.0),
        ("PO8", 306.0),
        ("P8", 324.0),
        ("TP8", 342.0),
    ];
    RING.iter().find(|(l, _)| *l == label).map(|(_, a)| *a)
}

/// Row prefix → (left ring label, midline polar angle, midline azimuth, right ring label).
fn row(prefix: &str) -> Option<(&'static str, f64, f64, &'static str)> {
    Some(match prefix {
        "AF" => ("AF7", 67.5, 90.0, "AF8"),
        "F" => ("F7", 45.0, 90.0, "F8"),
        "FC" => ("FT7", 22.5, 90.0, "FT8"),
        "C" => ("T7", 0.0, 90.0, "T8"),
        "CP" => ("TP7", 22.5, 270.0, "TP8"),
        "P" => ("P7", 45.0, 270.0, "P8"),
        "PO" => ("PO7", 67.5, 270.0, "PO8"),
        _ => return None,
    })
}

fn position_10_10(label: &str) -> Result<Vector3<f64>> {
    if let Some(az) = ring_azimuth(label) {
        return Ok(spherical(90.0, az));
    }
    let unknown = || Error::config(format!("no 10-10 position for electrode {label:?}"));
    let split = label
        .find(|c: char| c.is_ascii_digit() || c == 'z')
        .ok_or_else(unknown)?;
    let (prefix, column) = label.split_at(split);
    let (left, mid_polar, mid_az, right) = row(prefix).ok_or_else(unknown)?;
    let mid = spherical(mid_polar, mid_az);
    if column == "z" {
        return Ok(mid);
    }
    let number: i32 = column.parse().map_err(|_| unknown())?;
    if !(1..=8).contains(&number) {
        return Err(unknown());
    }
    // Odd columns lie left of the midline, even ones right; 7/8 sit on the ring.
    let steps = (number + 1) / 2;
    let signed = if number % 2 == 1 { -steps } else { steps };
    let p_left = spherical(90.0, ring_azimuth(left).unwrap());
    let p_right = spherical(90.0, ring_azimuth(right).unwrap());
    Ok(arc_point(&p_left, &mid, &p_right, signed as f64 / 4.0))
}

/// Point on the circle through `left`, `mid`, `right` (mirror-symmetric about
/// `mid`), at `fraction` ∈ [-1, 1] of the arc angle from `mid` to `right`.
fn arc_point(left: &Vector3<f64>, mid: &Vector3<f64>, right: &Vector3<f64>, fraction: f64) -> Vector3<f64> {
    let center = circumcenter(left, mid, right);
    let u = mid - center;
    let radius = u.norm();
    let u = u / radius;
    let to_right = right - center;
    let v = (to_right - u * to_right.dot(&u)).normalize();
    let end_angle = to_right.dot(&v).atan2(to_right.dot(&u));
    let angle = end_angle * fraction;
    center + (u * angle.cos() + v * angle.sin()) * radius
}

fn circumcenter(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> Vector3<f64> {
    let ab = b - a;
    let ac = c - a;
    let n = ab.cross(&ac);
    let num = ac.cross(&n) * ab.norm_squared() + n.cross(&ab) * ac.norm_squared();
    a + num / (2.0 * n.norm_squared())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pos(m: &Montage, l: &str) -> Vector3<f64> {
        m.positions[m.labels.iter().position(|x| x == l).unwrap()]
    }

    #[test]
    fn montage_sizes_and_unit_norm() {
        for (name, n) in [(MONTAGE_10_20_19, 19), (MONTAGE_10_10_61, 61)] {
            let m = Montage::standard(name).unwrap();
            assert_eq!(m.len(), n);
            for p in &m.positions {
                assert!((p.norm() - 1.0).abs() < 1e-12);
                assert!(p.z > -1e-12, "electrodes lie on the upper hemisphere");
            }
        }
        assert!(Montage::standard("nope").is_err());
    }

    #[test]
    fn landmark_positions() {
        let m = Montage::standard(MONTAGE_10_10_61).unwrap();
        assert!((pos(&m, "Cz") - Vector3::z()).norm() < 1e-12);
        assert!((pos(&m, "T8") - Vector3::x()).norm() < 1e-12);
        assert!((pos(&m, "Fpz") - Vector3::y()).norm() < 1e-12);
        let c3 = pos(&m, "C3");
        let expected = spherical(45.0, 180.0);
        assert!((c3 - expected).norm() < 1e-12);
    }

    #[test]
    fn left_right_mirror_symmetry() {
        let m = Montage::standard(MONTAGE_10_10_61).unwrap();
        for (l, r) in [("F3", "F4"), ("FC5", "FC6"), ("CP1", "CP2"), ("AF3", "AF4"), ("PO7", "PO8"), ("P5", "P6")] {
            let (pl, pr) = (pos(&m, l), pos(&m, r));
            assert!((pl.x + pr.x).abs() < 1e-12 && (pl.y - pr.y).abs() < 1e-12 && (pl.z - pr.z).abs() < 1e-12);
        }
    }

    #[test]
    fn row_steps_are_equal() {
        let m = Montage::standard(MONTAGE_10_10_61).unwrap();
        let row = ["F7", "F5", "F3", "F1", "Fz", "F2", "F4", "F6", "F8"];
        let steps: Vec<f64> = row.windows(2).map(|w| (pos(&m, w[0]) - pos(&m, w[1])).norm()).collect();
        for s in &steps {
            assert!((s - steps[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn laplacian_centers_are_in_the_dense_montage() {
        let m = Montage::standard(MONTAGE_10_10_61).unwrap();
        for c in SENSORIMOTOR_CENTERS {
            assert!(m.labels.iter().any(|l| l == c), "{c}");
        }
    }
}
