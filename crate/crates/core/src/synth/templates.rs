//! Object templates: part geometry, affordance labels, keypoint anchors and
//! parameter ranges for the seven object categories.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::shapes::Primitive;
use crate::labels::Affordance;
use crate::num::Vec3;

type V = Vec3<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Knife,
    Mug,
    Bowl,
    Spoon,
    Hammer,
    Cup,
    Tomato,
}

impl Category {
    pub const ALL: [Category; 7] = [
        Category::Knife,
        Category::Mug,
        Category::Bowl,
        Category::Spoon,
        Category::Hammer,
        Category::Cup,
        Category::Tomato,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Knife => "knife",
            Category::Mug => "mug",
            Category::Bowl => "bowl",
            Category::Spoon => "spoon",
            Category::Hammer => "hammer",
            Category::Cup => "cup",
            Category::Tomato => "tomato",
        }
    }
}

/// Concrete dimensions of one object, in meters. Local frame: z up, the
/// object rests on z = 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "category", rename_all = "snake_case")]
pub enum Shape {
    /// Handle along −x, blade along +x; the blade's spine faces +y.
    Knife {
        handle_len: f64,
        handle_width: f64,
        handle_height: f64,
        blade_len: f64,
        blade_width: f64,
        blade_thickness: f64,
    },
    /// Handle along −x, scoop shell centred on +x.
    Spoon { handle_len: f64, handle_width: f64, handle_height: f64, scoop_radius: f64, shell: f64 },
    /// Cylindrical handle along −x, head block spanning y at the origin.
    Hammer { handle_len: f64, handle_radius: f64, head_len: f64, head_size: f64 },
    /// Open cylinder with a handle fin on +x.
    Mug { radius: f64, height: f64, wall: f64, bottom: f64 },
    Cup { radius: f64, height: f64, wall: f64, bottom: f64 },
    /// Hemispherical shell; `radius` is the inner radius.
    Bowl { radius: f64, wall: f64 },
    Tomato { radius: f64 },
}

/// One labelled surface region of an object.
#[derive(Debug, Clone, PartialEq)]
pub struct Part {
    pub affordance: Affordance,
    pub primitives: Vec<Primitive>,
}

impl Part {
    pub fn distance(&self, p: V) -> f64 {
        self.primitives.iter().map(|prim| prim.distance(p)).fold(f64::INFINITY, f64::min)
    }
}

const MUG_HANDLE_REACH: f64 = 0.022;
const MUG_HANDLE_HALF_WIDTH: f64 = 0.006;

fn v(x: f64, y: f64, z: f64) -> V {
    V::new(x, y, z)
}

fn vessel_parts(radius: f64, height: f64, wall: f64, bottom: f64, handle: bool) -> Vec<Part> {
    let inner = radius - wall;
    let mut parts = vec![
        Part {
            affordance: Affordance::WrapGrasp,
            primitives: vec![Primitive::Tube {
                base: V::zero(),
                axis: V::unit_z(),
                radius,
                length: height,
                inward: false,
            }],
        },
        Part {
            affordance: Affordance::Contain,
            primitives: vec![
                Primitive::Tube {
                    base: v(0.0, 0.0, bottom),
                    axis: V::unit_z(),
                    radius: inner,
                    length: height - bottom,
                    inward: true,
                },
                Primitive::Annulus { center: v(0.0, 0.0, bottom), normal: V::unit_z(), inner: 0.0, outer: inner },
                Primitive::Annulus { center: v(0.0, 0.0, height), normal: V::unit_z(), inner, outer: radius },
            ],
        },
    ];
    if handle {
        let (z0, z1) = mug_handle_span(height);
        parts.push(Part {
            affordance: Affordance::Grasp,
            primitives: vec![Primitive::Box {
                min: v(radius - 0.001, -MUG_HANDLE_HALF_WIDTH, z0),
                max: v(radius + MUG_HANDLE_REACH, MUG_HANDLE_HALF_WIDTH, z1),
                skip_bottom: false,
            }],
        });
    }
    parts
}

fn mug_handle_span(height: f64) -> (f64, f64) {
    (0.25 * height, 0.8 * height)
}

/// Rim anchors shared by every open container: near and far rim points
/// along the view, then the left/right pair.
fn rim_anchors(center: V, rho: f64, toward: V, right: V) -> [V; 4] {
    [center + toward * rho, center - toward * rho, center - right * rho, center + right * rho]
}

impl Shape {
    pub fn category(&self) -> Category {
        match self {
            Shape::Knife { .. } => Category::Knife,
            Shape::Spoon { .. } => Category::Spoon,
            Shape::Hammer { .. } => Category::Hammer,
            Shape::Mug { .. } => Category::Mug,
            Shape::Cup { .. } => Category::Cup,
            Shape::Bowl { .. } => Category::Bowl,
            Shape::Tomato { .. } => Category::Tomato,
        }
    }

    /// Draws dimensions uniformly from the category's size ranges.
    pub fn sample<R: Rng>(category: Category, rng: &mut R) -> Shape {
        match category {
            Category::Knife => Shape::Knife {
                handle_len: rng.gen_range(0.09..0.12),
                handle_width: rng.gen_range(0.018..0.024),
                handle_height: rng.gen_range(0.014..0.02),
                blade_len: rng.gen_range(0.10..0.14),
                blade_width: rng.gen_range(0.022..0.03),
                blade_thickness: 0.003,
            },
            Category::Spoon => Shape::Spoon {
                handle_len: rng.gen_range(0.08..0.11),
                handle_width: rng.gen_range(0.012..0.016),
                handle_height: 0.006,
                scoop_radius: rng.gen_range(0.022..0.028),
                shell: 0.002,
            },
            Category::Hammer => Shape::Hammer {
                handle_len: rng.gen_range(0.18..0.22),
                handle_radius: rng.gen_range(0.010..0.012),
                head_len: rng.gen_range(0.08..0.11),
                head_size: rng.gen_range(0.026..0.032),
            },
            Category::Mug => Shape::Mug {
                radius: rng.gen_range(0.035..0.045),
                height: rng.gen_range(0.08..0.10),
                wall: 0.004,
                bottom: 0.006,
            },
            Category::Cup => Shape::Cup {
                radius: rng.gen_range(0.028..0.036),
                height: rng.gen_range(0.07..0.09),
                wall: 0.003,
                bottom: 0.005,
            },
            Category::Bowl => Shape::Bowl { radius: rng.gen_range(0.06..0.075), wall: 0.004 },
            Category::Tomato => Shape::Tomato { radius: rng.gen_range(0.028..0.035) },
        }
    }

    pub fn parts(&self) -> Vec<Part> {
        match *self {
            Shape::Knife { handle_len, handle_width, handle_height, blade_len, blade_width, blade_thickness } => vec![
                Part {
                    affordance: Affordance::Grasp,
                    primitives: vec![Primitive::Box {
                        min: v(-handle_len, -handle_width / 2.0, 0.0),
                        max: v(0.0, handle_width / 2.0, handle_height),
                        skip_bottom: true,
                    }],
                },
                Part {
                    affordance: Affordance::Cut,
                    primitives: vec![Primitive::Box {
                        min: v(0.0, -blade_width / 2.0, 0.0),
                        max: v(blade_len, blade_width / 2.0, blade_thickness),
                        skip_bottom: true,
                    }],
                },
            ],
            Shape::Spoon { handle_len, handle_width, handle_height, scoop_radius, shell } => {
                let c = self.scoop_center().expect("spoon");
                vec![
                    Part {
                        affordance: Affordance::Grasp,
                        primitives: vec![Primitive::Box {
                            min: v(-handle_len, -handle_width / 2.0, 0.0),
                            max: v(0.0, handle_width / 2.0, handle_height),
                            skip_bottom: true,
                        }],
                    },
                    Part {
                        affordance: Affordance::Scoop,
                        primitives: vec![
                            Primitive::Sphere { center: c, radius: scoop_radius, lower_half: true, inward: true },
                            Primitive::Sphere { center: c, radius: scoop_radius + shell, lower_half: true, inward: false },
                            Primitive::Annulus {
                                center: c,
                                normal: V::unit_z(),
                                inner: scoop_radius,
                                outer: scoop_radius + shell,
                            },
                        ],
                    },
                ]
            }
            Shape::Hammer { handle_len, handle_radius, head_len, head_size } => vec![
                Part {
                    affordance: Affordance::Grasp,
                    primitives: vec![
                        Primitive::Tube {
                            base: v(-handle_len, 0.0, handle_radius),
                            axis: V::unit_x(),
                            radius: handle_radius,
                            length: handle_len,
                            inward: false,
                        },
                        Primitive::Annulus {
                            center: v(-handle_len, 0.0, handle_radius),
                            normal: -V::unit_x(),
                            inner: 0.0,
                            outer: handle_radius,
                        },
                    ],
                },
                Part {
                    affordance: Affordance::Pound,
                    primitives: vec![Primitive::Box {
                        min: v(0.0, -head_len / 2.0, 0.0),
                        max: v(head_size, head_len / 2.0, head_size),
                        skip_bottom: true,
                    }],
                },
            ],
            Shape::Mug { radius, height, wall, bottom } => vessel_parts(radius, height, wall, bottom, true),
            Shape::Cup { radius, height, wall, bottom } => vessel_parts(radius, height, wall, bottom, false),
            Shape::Bowl { radius, wall } => {
                let c = v(0.0, 0.0, radius + wall);
                vec![Part {
                    affordance: Affordance::Contain,
                    primitives: vec![
                        Primitive::Sphere { center: c, radius, lower_half: true, inward: true },
                        Primitive::Sphere { center: c, radius: radius + wall, lower_half: true, inward: false },
                        Primitive::Annulus { center: c, normal: V::unit_z(), inner: radius, outer: radius + wall },
                    ],
                }]
            }
            Shape::Tomato { radius } => vec![Part {
                affordance: Affordance::Grasp,
                primitives: vec![Primitive::Sphere {
                    center: v(0.0, 0.0, radius),
                    radius,
                    lower_half: false,
                    inward: false,
                }],
            }],
        }
    }

    /// Canonical keypoint anchors for every part, in local coordinates and
    /// part order. `camera` is the camera centre in the object's frame.
    pub fn anchors(&self, camera: V) -> Vec<[V; 4]> {
        self.anchor_candidates(camera).into_iter().map(|c| c[0]).collect()
    }

    /// Candidate anchor quadruplets per part, most preferred first. The
    /// scene builder keeps the candidate that best matches the observed
    /// surface, which lets round bodies move their grip band away from
    /// occluders.
    pub fn anchor_candidates(&self, camera: V) -> Vec<Vec<[V; 4]>> {
        let up = V::unit_z();
        let horizontal = V::new(camera.x, camera.y, 0.0);
        let toward = horizontal.normalized().unwrap_or(-V::unit_y());
        let right = up.cross(toward);
        let single = |quads: Vec<[V; 4]>| quads.into_iter().map(|q| vec![q]).collect::<Vec<_>>();
        let quads = match *self {
            Shape::Knife { handle_len, handle_width, handle_height, blade_len, blade_width, blade_thickness } => {
                let (h, t) = (handle_height, blade_thickness);
                vec![
                    [
                        v(-handle_len, 0.0, h),
                        v(0.0, 0.0, h),
                        v(-handle_len / 2.0, -handle_width / 2.0, h),
                        v(-handle_len / 2.0, handle_width / 2.0, h),
                    ],
                    [
                        v(blade_len / 2.0, blade_width / 2.0, t),
                        v(blade_len / 2.0, -blade_width / 2.0, t),
                        v(0.0, 0.0, t),
                        v(blade_len, 0.0, t),
                    ],
                ]
            }
            Shape::Spoon { handle_len, handle_width, handle_height, scoop_radius, shell } => {
                let h = handle_height;
                let c = self.scoop_center().expect("spoon");
                let rho = scoop_radius + shell / 2.0;
                vec![
                    [
                        v(-handle_len, 0.0, h),
                        v(0.0, 0.0, h),
                        v(-handle_len / 2.0, -handle_width / 2.0, h),
                        v(-handle_len / 2.0, handle_width / 2.0, h),
                    ],
                    rim_anchors(c, rho, -V::unit_x(), -V::unit_y()),
                ]
            }
            Shape::Hammer { handle_len, handle_radius, head_len, head_size } => {
                let r = handle_radius;
                let side = (std::f64::consts::PI / 3.0).sin() * r;
                let lift = r + 0.5 * r;
                vec![
                    [
                        v(-handle_len, 0.0, 2.0 * r),
                        v(-0.01, 0.0, 2.0 * r),
                        v(-handle_len / 2.0, -side, lift),
                        v(-handle_len / 2.0, side, lift),
                    ],
                    [
                        v(head_size / 2.0, head_len / 2.0, head_size),
                        v(head_size / 2.0, -head_len / 2.0, head_size),
                        v(0.0, 0.0, head_size),
                        v(head_size, 0.0, head_size),
                    ],
                ]
            }
            Shape::Mug { radius, height, wall, .. } | Shape::Cup { radius, height, wall, .. } => {
                // silhouette generators of the body as seen from the camera
                let phi = (radius / horizontal.norm()).min(1.0).acos();
                let left = (toward * phi.cos() - right * phi.sin()) * radius;
                let rightmost = (toward * phi.cos() + right * phi.sin()) * radius;
                let wrap: Vec<[V; 4]> = [0.5, 0.4, 0.6, 0.3, 0.7, 0.2, 0.8, 0.1, 0.9]
                    .iter()
                    .map(|f| {
                        let band = up * (f * height);
                        [
                            left + band,
                            rightmost + band,
                            toward * radius + up * (0.15 * height),
                            toward * radius + up * (0.85 * height),
                        ]
                    })
                    .collect();
                let mut out = vec![wrap, vec![rim_anchors(up * height, radius - wall / 2.0, toward, right)]];
                if matches!(self, Shape::Mug { .. }) {
                    let (z0, z1) = mug_handle_span(height);
                    let len = z1 - z0;
                    let outer = radius + MUG_HANDLE_REACH;
                    let mid_x = radius + MUG_HANDLE_REACH / 2.0;
                    let zm = 0.5 * (z0 + z1);
                    out.push(vec![[
                        v(outer, 0.0, z0 + 0.1 * len),
                        v(outer, 0.0, z1 - 0.1 * len),
                        v(mid_x, -MUG_HANDLE_HALF_WIDTH, zm),
                        v(mid_x, MUG_HANDLE_HALF_WIDTH, zm),
                    ]]);
                }
                return out;
            }
            Shape::Bowl { radius, wall } => {
                vec![rim_anchors(up * (radius + wall), radius + wall / 2.0, toward, right)]
            }
            Shape::Tomato { radius } => {
                let c = up * radius;
                vec![[c + toward * radius, c + up * radius, c - right * radius, c + right * radius]]
            }
        };
        single(quads)
    }

    pub(crate) fn scoop_center(&self) -> Option<V> {
        match *self {
            Shape::Spoon { scoop_radius, shell, .. } => {
                let r = scoop_radius + shell;
                Some(v(r, 0.0, r))
            }
            _ => None,
        }
    }

    /// Per-part base colours.
    pub fn sample_colors<R: Rng>(&self, rng: &mut R) -> Vec<[f64; 3]> {
        const STEEL: [f64; 3] = [0.72, 0.74, 0.77];
        const HANDLES: [[f64; 3]; 4] = [[0.12, 0.12, 0.14], [0.80, 0.25, 0.18], [0.18, 0.42, 0.75], [0.55, 0.38, 0.22]];
        const CERAMIC: [[f64; 3]; 4] = [[0.92, 0.91, 0.88], [0.25, 0.45, 0.80], [0.78, 0.22, 0.25], [0.30, 0.62, 0.38]];
        let mut pick = |set: &[[f64; 3]]| set[rng.gen_range(0..set.len())];
        match self {
            Shape::Knife { .. } => vec![pick(&HANDLES), STEEL],
            Shape::Spoon { .. } => vec![pick(&HANDLES), STEEL],
            Shape::Hammer { .. } => vec![[0.62, 0.46, 0.26], [0.30, 0.30, 0.33]],
            Shape::Mug { .. } => {
                let c = pick(&CERAMIC);
                vec![c, c, c]
            }
            Shape::Cup { .. } | Shape::Bowl { .. } => {
                let c = pick(&CERAMIC);
                vec![c; self.parts().len()]
            }
            Shape::Tomato { .. } => vec![[0.86, 0.16, 0.10]],
        }
    }

    /// Outer body radius of round containers (mug, cup, bowl).
    pub fn outer_radius(&self) -> Option<f64> {
        match *self {
            Shape::Mug { radius, .. } | Shape::Cup { radius, .. } => Some(radius),
            Shape::Bowl { radius, wall } => Some(radius + wall),
            Shape::Tomato { radius } => Some(radius),
            _ => None,
        }
    }
}
