//! Parametric surface patches: uniform surface sampling with outward normals
//! and exact point-to-surface distance.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::num::Vec3;

type V = Vec3<f64>;

/// One surface patch in object-local coordinates (z up, table at z = 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    /// Boundary of an axis-aligned box. The bottom face is skipped when it
    /// rests on the table.
    Box { min: V, max: V, skip_bottom: bool },
    /// Open tube around `axis` starting at `base`.
    Tube { base: V, axis: V, radius: f64, length: f64, inward: bool },
    /// Flat ring (a disk when `inner == 0`).
    Annulus { center: V, normal: V, inner: f64, outer: f64 },
    /// Sphere, or only its lower half (below the centre along local z).
    Sphere { center: V, radius: f64, lower_half: bool, inward: bool },
}

/// Sample position with the outward surface normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Surfel {
    pub position: V,
    pub normal: V,
}

fn count(extent: f64, spacing: f64) -> usize {
    ((extent / spacing).round() as usize).max(1)
}

/// Two unit vectors completing `axis` to a right-handed basis.
pub fn orthonormal_basis(axis: V) -> (V, V) {
    let a = axis.normalized().unwrap_or_else(V::unit_z);
    let helper = if a.x.abs() < 0.9 { V::unit_x() } else { V::unit_y() };
    let u = helper.reject_from(a).normalized().expect("helper not parallel to axis");
    (u, a.cross(u))
}

impl Primitive {
    pub fn sample(&self, spacing: f64) -> Vec<Surfel> {
        let mut out = Vec::new();
        match *self {
            Primitive::Box { min, max, skip_bottom } => {
                let size = max - min;
                for axis in 0..3 {
                    let (a1, a2) = ((axis + 1) % 3, (axis + 2) % 3);
                    let (n1, n2) = (count(size[a1], spacing), count(size[a2], spacing));
                    for side in [0usize, 1] {
                        if axis == 2 && side == 0 && skip_bottom {
                            continue;
                        }
                        let mut normal = [0.0; 3];
                        normal[axis] = if side == 0 { -1.0 } else { 1.0 };
                        for i in 0..n1 {
                            for j in 0..n2 {
                                let mut p = [0.0; 3];
                                p[axis] = if side == 0 { min[axis] } else { max[axis] };
                                p[a1] = min[a1] + size[a1] * (i as f64 + 0.5) / n1 as f64;
                                p[a2] = min[a2] + size[a2] * (j as f64 + 0.5) / n2 as f64;
                                out.push(Surfel { position: V::from(p), normal: V::from(normal) });
                            }
                        }
                    }
                }
            }
            Primitive::Tube { base, axis, radius, length, inward } => {
                let (u, w) = orthonormal_basis(axis);
                let a = axis.normalized().unwrap_or_else(V::unit_z);
                let n_theta = count(2.0 * PI * radius, spacing).max(8);
                let n_len = count(length, spacing);
                for i in 0..n_theta {
                    let theta = 2.0 * PI * (i as f64 + 0.5) / n_theta as f64;
                    let radial = u * theta.cos() + w * theta.sin();
                    for j in 0..n_len {
                        let h = length * (j as f64 + 0.5) / n_len as f64;
                        out.push(Surfel {
                            position: base + a * h + radial * radius,
                            normal: if inward { -radial } else { radial },
                        });
                    }
                }
            }
            Primitive::Annulus { center, normal, inner, outer } => {
                let (u, w) = orthonormal_basis(normal);
                let n = normal.normalized().unwrap_or_else(V::unit_z);
                let rings = count(outer - inner, spacing);
                for k in 0..rings {
                    let r = inner + (outer - inner) * (k as f64 + 0.5) / rings as f64;
                    let n_theta = count(2.0 * PI * r, spacing).max(6);
                    for i in 0..n_theta {
                        let theta = 2.0 * PI * (i as f64 + 0.5) / n_theta as f64;
                        out.push(Surfel {
                            position: center + (u * theta.cos() + w * theta.sin()) * r,
                            normal: n,
                        });
                    }
                }
            }
            Primitive::Sphere { center, radius, lower_half, inward } => {
                // polar angle measured from the bottom pole
                let span = if lower_half { 0.5 * PI } else { PI };
                let rings = count(span * radius, spacing).max(2);
                for k in 0..rings {
                    let phi = span * (k as f64 + 0.5) / rings as f64;
                    let ring_r = radius * phi.sin();
                    let n_theta = count(2.0 * PI * ring_r, spacing).max(6);
                    for i in 0..n_theta {
                        let theta = 2.0 * PI * (i as f64 + 0.5) / n_theta as f64;
                        let dir = V::new(phi.sin() * theta.cos(), phi.sin() * theta.sin(), -phi.cos());
                        out.push(Surfel {
                            position: center + dir * radius,
                            normal: if inward { -dir } else { dir },
                        });
                    }
                }
            }
        }
        out
    }

    /// Euclidean distance from `p` to this patch.
    pub fn distance(&self, p: V) -> f64 {
        match *self {
            Primitive::Box { min, max, .. } => {
                let clamped = V::new(p.x.clamp(min.x, max.x), p.y.clamp(min.y, max.y), p.z.clamp(min.z, max.z));
                let outside = p.distance(clamped);
                if outside > 0.0 {
                    outside
                } else {
                    let d = [p.x - min.x, max.x - p.x, p.y - min.y, max.y - p.y, p.z - min.z, max.z - p.z];
                    d.iter().cloned().fold(f64::INFINITY, f64::min)
                }
            }
            Primitive::Tube { base, axis, radius, length, .. } => {
                let a = axis.normalized().unwrap_or_else(V::unit_z);
                let rel = p - base;
                let h = rel.dot(a);
                let rho = rel.reject_from(a).norm();
                let dh = if h < 0.0 {
                    -h
                } else if h > length {
                    h - length
                } else {
                    0.0
                };
                ((rho - radius).powi(2) + dh * dh).sqrt()
            }
            Primitive::Annulus { center, normal, inner, outer } => {
                let n = normal.normalized().unwrap_or_else(V::unit_z);
                let rel = p - center;
                let h = rel.dot(n);
                let rho = rel.reject_from(n).norm();
                let dr = rho - rho.clamp(inner, outer);
                (h * h + dr * dr).sqrt()
            }
            Primitive::Sphere { center, radius, lower_half, .. } => {
                let rel = p - center;
                if !lower_half || rel.z <= 0.0 {
                    (rel.norm() - radius).abs()
                } else {
                    let rho = (rel.x * rel.x + rel.y * rel.y).sqrt();
                    ((rho - radius).powi(2) + rel.z * rel.z).sqrt()
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_primitives() -> Vec<Primitive> {
        vec![
            Primitive::Box { min: V::new(-0.05, -0.01, 0.0), max: V::new(0.03, 0.01, 0.02), skip_bottom: true },
            Primitive::Tube { base: V::new(0.0, 0.0, 0.0), axis: V::unit_x(), radius: 0.013, length: 0.2, inward: false },
            Primitive::Tube { base: V::zero(), axis: V::unit_z(), radius: 0.03, length: 0.09, inward: true },
            Primitive::Annulus { center: V::new(0.0, 0.0, 0.09), normal: V::unit_z(), inner: 0.027, outer: 0.03 },
            Primitive::Sphere { center: V::new(0.0, 0.0, 0.07), radius: 0.065, lower_half: true, inward: true },
            Primitive::Sphere { center: V::new(0.0, 0.0, 0.03), radius: 0.03, lower_half: false, inward: false },
        ]
    }

    #[test]
    fn samples_lie_on_their_surface() {
        for prim in all_primitives() {
            let samples = prim.sample(0.002);
            assert!(!samples.is_empty());
            for s in samples {
                assert!(prim.distance(s.position) < 1e-12, "{prim:?}");
                assert!((s.normal.norm() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sampling_density_is_about_one_per_four_square_mm() {
        let tube = Primitive::Tube { base: V::zero(), axis: V::unit_z(), radius: 0.03, length: 0.1, inward: false };
        let area_mm2 = 2.0 * PI * 30.0 * 100.0;
        let n = tube.sample(0.002).len() as f64;
        assert!((n / (area_mm2 / 4.0) - 1.0).abs() < 0.05);
    }

    #[test]
    fn box_distance_inside_and_outside() {
        let b = Primitive::Box { min: V::zero(), max: V::new(1.0, 1.0, 1.0), skip_bottom: false };
        assert!((b.distance(V::new(0.5, 0.5, 0.9)) - 0.1).abs() < 1e-12);
        assert!((b.distance(V::new(2.0, 0.5, 0.5)) - 1.0).abs() < 1e-12);
    }
}
