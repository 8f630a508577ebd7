use serde::{Deserialize, Serialize};

use crate::error::{QpatError, Result};

/// Solid primitive used for phantom bodies and inclusions (mm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Shape {
    Cylinder {
        center: [f64; 3],
        radius: f64,
        axis: [f64; 3],
        half_length: f64,
    },
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

const AXIS_TOL: f64 = 1e-9;

impl Shape {
    /// Cylinder with its axis normalized.
    pub fn cylinder(center: [f64; 3], radius: f64, axis: [f64; 3], half_length: f64) -> Result<Self> {
        let len = norm(axis);
        if !(len > 0.0) {
            return Err(QpatError::Validation("cylinder axis must be non-zero".into()));
        }
        let s = Shape::Cylinder {
            center,
            radius,
            axis: [axis[0] / len, axis[1] / len, axis[2] / len],
            half_length,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn sphere(center: [f64; 3], radius: f64) -> Result<Self> {
        let s = Shape::Sphere { center, radius };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Shape::Cylinder {
                center,
                radius,
                axis,
                half_length,
            } => {
                if !(radius > 0.0) || !(half_length > 0.0) || center.iter().any(|c| !c.is_finite()) {
                    return Err(QpatError::Validation(format!("invalid cylinder {self:?}")));
                }
                if (norm(axis) - 1.0).abs() > AXIS_TOL {
                    return Err(QpatError::Validation("cylinder axis must be a unit vector".into()));
                }
            }
            Shape::Sphere { center, radius } => {
                if !(radius > 0.0) || center.iter().any(|c| !c.is_finite()) {
                    return Err(QpatError::Validation(format!("invalid sphere {self:?}")));
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn contains(&self, p: [f64; 3]) -> bool {
        match *self {
            Shape::Cylinder {
                center,
                radius,
                axis,
                half_length,
            } => {
                let v = sub(p, center);
                let t = dot(v, axis);
                if t.abs() > half_length {
                    return false;
                }
                let r2 = dot(v, v) - t * t;
                r2 <= radius * radius
            }
            Shape::Sphere { center, radius } => {
                let v = sub(p, center);
                dot(v, v) <= radius * radius
            }
        }
    }

    pub fn center(&self) -> [f64; 3] {
        match *self {
            Shape::Cylinder { center, .. } | Shape::Sphere { center, .. } => center,
        }
    }

    pub fn radius(&self) -> f64 {
        match *self {
            Shape::Cylinder { radius, .. } | Shape::Sphere { radius, .. } => radius,
        }
    }

    /// Radius of a sphere around `center()` enclosing the whole shape.
    fn bounding_radius(&self) -> f64 {
        match *self {
            Shape::Cylinder {
                radius, half_length, ..
            } => radius.hypot(half_length),
            Shape::Sphere { radius, .. } => radius,
        }
    }

    /// Whether `inner` lies entirely within `self`. Exact for parallel
    /// cylinders and spheres, conservative (bounding sphere) otherwise.
    pub fn encloses(&self, inner: &Shape) -> bool {
        const EPS: f64 = 1e-9;
        match (*self, *inner) {
            (
                Shape::Cylinder {
                    center: c0,
                    radius: r0,
                    axis: a0,
                    half_length: h0,
                },
                Shape::Cylinder {
                    center: c1,
                    radius: r1,
                    axis: a1,
                    half_length: h1,
                },
            ) if (dot(a0, a1).abs() - 1.0).abs() < AXIS_TOL => {
                let v = sub(c1, c0);
                let t = dot(v, a0);
                let radial = (dot(v, v) - t * t).max(0.0).sqrt();
                radial + r1 <= r0 + EPS && t.abs() + h1 <= h0 + EPS
            }
            (
                Shape::Cylinder {
                    center: c0,
                    radius: r0,
                    axis: a0,
                    half_length: h0,
                },
                Shape::Sphere {
                    center: c1,
                    radius: r1,
                },
            ) => {
                let v = sub(c1, c0);
                let t = dot(v, a0);
                let radial = (dot(v, v) - t * t).max(0.0).sqrt();
                radial + r1 <= r0 + EPS && t.abs() + r1 <= h0 + EPS
            }
            (Shape::Sphere { center: c0, radius: r0 }, other) => {
                norm(sub(other.center(), c0)) + other.bounding_radius() <= r0 + EPS
            }
            (outer @ Shape::Cylinder { .. }, other) => {
                let b = Shape::Sphere {
                    center: other.center(),
                    radius: other.bounding_radius(),
                };
                outer.encloses(&b)
            }
        }
    }
}
