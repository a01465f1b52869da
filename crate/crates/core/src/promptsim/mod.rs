//! Prompt types, training-time prompt simulation, rasterization, and the
//! encoding of prompts into guidance channels.
//!
//! Coordinates are voxel indices in `(z, y, x)` order. Two in-plane
//! conventions coexist and are kept deliberately distinct:
//!
//! * point centers and scribble vertices name voxels;
//! * box corners and lasso vertices live on the voxel-corner lattice, where
//!   voxel `(y, x)` covers `[y, y+1) × [x, x+1)`. A box `min..max` is
//!   therefore upper-exclusive in voxel terms.

mod guidance;
mod polygon;
mod raster;
mod sampler;

pub use guidance::{encode_guidance, GuidanceConfig, GuidanceLayout, GuidanceStack};
pub use polygon::{is_simple_polygon, polygon_area2};
pub use raster::{rasterize_prompt, stamp_prompt};
pub use sampler::{
    corrective_negative_point, corrective_point, select_slice_weighted, simulate_box_prompt,
    simulate_lasso_prompt, simulate_point_prompts, simulate_prompts, simulate_scribble,
    simulate_scribble_prompt, SimulatedScribble,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("mask has no foreground")]
    EmptyMask,
    #[error("no slice has enough foreground for a {0} prompt")]
    DegenerateSlice(&'static str),
    #[error("prompt out of bounds: {0}")]
    OutOfBounds(String),
    #[error("invalid prompt geometry: {0}")]
    Invalid(String),
    #[error("invalid prompt JSON: {0}")]
    Json(String),
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: [usize; 3], got: [usize; 3] },
}

pub type Result<T, E = PromptError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PointPrompt {
    pub center: [usize; 3],
    pub radius: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BoxPrompt {
    pub slice: usize,
    /// Inclusive lower corner `(y, x)`.
    pub min: [usize; 2],
    /// Exclusive upper corner `(y, x)`.
    pub max: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ScribblePrompt {
    pub slice: usize,
    /// Voxel indices `(y, x)` joined by integer line stepping.
    pub vertices: Vec<[usize; 2]>,
    /// Square brush side, 1 or 2 voxels.
    pub thickness: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LassoPrompt {
    pub slice: usize,
    /// Corner-lattice points `(y, x)` of a closed polygon; closure is implicit.
    pub vertices: Vec<[i64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum PromptKind {
    Point(PointPrompt),
    Box(BoxPrompt),
    Lasso(LassoPrompt),
    Scribble(ScribblePrompt),
}

/// The four interaction kinds, in guidance-channel order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindTag {
    Point,
    Box,
    Lasso,
    Scribble,
}

impl KindTag {
    pub const ALL: [KindTag; 4] = [KindTag::Point, KindTag::Box, KindTag::Lasso, KindTag::Scribble];

    pub fn name(self) -> &'static str {
        match self {
            KindTag::Point => "point",
            KindTag::Box => "box",
            KindTag::Lasso => "lasso",
            KindTag::Scribble => "scribble",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// What a simulated interaction consists of; `None` is the automatic baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptType {
    None,
    Point,
    Box,
    Lasso,
    Scribble,
}

impl PromptType {
    pub const ALL: [PromptType; 5] =
        [PromptType::None, PromptType::Point, PromptType::Box, PromptType::Lasso, PromptType::Scribble];

    pub fn name(self) -> &'static str {
        match self {
            PromptType::None => "none",
            PromptType::Point => "point",
            PromptType::Box => "box",
            PromptType::Lasso => "lasso",
            PromptType::Scribble => "scribble",
        }
    }

    /// Row label used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            PromptType::None => "None",
            PromptType::Point => "Point",
            PromptType::Box => "BBox",
            PromptType::Lasso => "Lasso",
            PromptType::Scribble => "Scribble",
        }
    }
}

impl std::str::FromStr for PromptType {
    type Err = PromptError;
    fn from_str(s: &str) -> Result<Self> {
        PromptType::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| PromptError::Invalid(format!("unknown prompt type {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "PromptWire", into = "PromptWire")]
pub struct Prompt {
    pub kind: PromptKind,
    pub polarity: Polarity,
}

impl Prompt {
    pub fn point(center: [usize; 3], radius: u32, polarity: Polarity) -> Self {
        Prompt { kind: PromptKind::Point(PointPrompt { center, radius }), polarity }
    }

    pub fn bbox(slice: usize, min: [usize; 2], max: [usize; 2], polarity: Polarity) -> Self {
        Prompt { kind: PromptKind::Box(BoxPrompt { slice, min, max }), polarity }
    }

    pub fn lasso(slice: usize, vertices: Vec<[i64; 2]>, polarity: Polarity) -> Self {
        Prompt { kind: PromptKind::Lasso(LassoPrompt { slice, vertices }), polarity }
    }

    pub fn scribble(slice: usize, vertices: Vec<[usize; 2]>, thickness: u32, polarity: Polarity) -> Self {
        Prompt { kind: PromptKind::Scribble(ScribblePrompt { slice, vertices, thickness }), polarity }
    }

    pub fn tag(&self) -> KindTag {
        match self.kind {
            PromptKind::Point(_) => KindTag::Point,
            PromptKind::Box(_) => KindTag::Box,
            PromptKind::Lasso(_) => KindTag::Lasso,
            PromptKind::Scribble(_) => KindTag::Scribble,
        }
    }

    /// Intrinsic invariants that do not depend on a volume.
    pub fn check_shape(&self) -> Result<()> {
        match &self.kind {
            PromptKind::Point(p) => {
                if !(1..=5).contains(&p.radius) {
                    return Err(PromptError::Invalid(format!("point radius {} outside [1,5]", p.radius)));
                }
            }
            PromptKind::Box(b) => {
                if b.min[0] >= b.max[0] || b.min[1] >= b.max[1] {
                    return Err(PromptError::Invalid(format!("box min {:?} not below max {:?}", b.min, b.max)));
                }
            }
            PromptKind::Scribble(s) => {
                if s.vertices.len() < 2 {
                    return Err(PromptError::Invalid("scribble needs at least 2 vertices".into()));
                }
                if s.vertices.windows(2).any(|w| w[0] == w[1]) {
                    return Err(PromptError::Invalid("consecutive scribble vertices coincide".into()));
                }
                if !(1..=2).contains(&s.thickness) {
                    return Err(PromptError::Invalid(format!("scribble thickness {} not in {{1,2}}", s.thickness)));
                }
            }
            PromptKind::Lasso(l) => {
                if !(4..=12).contains(&l.vertices.len()) {
                    return Err(PromptError::Invalid(format!("lasso has {} vertices, need 4-12", l.vertices.len())));
                }
                if !is_simple_polygon(&l.vertices) {
                    return Err(PromptError::Invalid("lasso polygon is not simple with positive area".into()));
                }
            }
        }
        Ok(())
    }

    /// Checks the prompt against a volume of the given `(z, y, x)` shape.
    pub fn validate(&self, shape: [usize; 3]) -> Result<()> {
        self.check_shape()?;
        let [d, h, w] = shape;
        let oob = |what: String| Err(PromptError::OutOfBounds(what));
        match &self.kind {
            PromptKind::Point(p) => {
                if p.center[0] >= d || p.center[1] >= h || p.center[2] >= w {
                    return oob(format!("point {:?} outside {:?}", p.center, shape));
                }
            }
            PromptKind::Box(b) => {
                if b.slice >= d || b.max[0] > h || b.max[1] > w {
                    return oob(format!("box on slice {} {:?}-{:?} outside {:?}", b.slice, b.min, b.max, shape));
                }
            }
            PromptKind::Scribble(s) => {
                if s.slice >= d || s.vertices.iter().any(|v| v[0] >= h || v[1] >= w) {
                    return oob(format!("scribble on slice {} outside {:?}", s.slice, shape));
                }
            }
            PromptKind::Lasso(l) => {
                if l.slice >= d || l.vertices.iter().any(|v| v[0] < 0 || v[1] < 0 || v[0] > h as i64 || v[1] > w as i64) {
                    return oob(format!("lasso on slice {} outside {:?}", l.slice, shape));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("prompt serializes")
    }

    pub fn from_json(s: &str) -> Result<Prompt> {
        serde_json::from_str(s).map_err(|e| PromptError::Json(e.to_string()))
    }
}

/// Flat wire form: exactly the fields of the matching kind are present.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PromptWire {
    kind: String,
    polarity: Polarity,
    #[serde(skip_serializing_if = "Option::is_none")]
    slice: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    center: Option<[i64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    radius: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    min: Option<[i64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max: Option<[i64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    vertices: Option<Vec<[i64; 2]>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    thickness: Option<i64>,
}

fn non_negative(v: i64, what: &str) -> Result<usize> {
    usize::try_from(v).map_err(|_| PromptError::OutOfBounds(format!("negative {what} {v}")))
}

impl TryFrom<PromptWire> for Prompt {
    type Error = PromptError;

    fn try_from(w: PromptWire) -> Result<Prompt> {
        let present = [
            ("slice", w.slice.is_some()),
            ("center", w.center.is_some()),
            ("radius", w.radius.is_some()),
            ("min", w.min.is_some()),
            ("max", w.max.is_some()),
            ("vertices", w.vertices.is_some()),
            ("thickness", w.thickness.is_some()),
        ];
        let required: &[&str] = match w.kind.as_str() {
            "point" => &["center", "radius"],
            "box" => &["slice", "min", "max"],
            "lasso" => &["slice", "vertices"],
            "scribble" => &["slice", "vertices", "thickness"],
            other => return Err(PromptError::Json(format!("unknown kind {other:?}"))),
        };
        for (name, is_set) in present {
            if is_set != required.contains(&name) {
                let verb = if is_set { "unexpected" } else { "missing" };
                return Err(PromptError::Json(format!("{verb} field {name:?} for kind {:?}", w.kind)));
            }
        }
        let kind = match w.kind.as_str() {
            "point" => {
                let c = w.center.unwrap();
                PromptKind::Point(PointPrompt {
                    center: [non_negative(c[0], "z")?, non_negative(c[1], "y")?, non_negative(c[2], "x")?],
                    radius: u32::try_from(w.radius.unwrap()).map_err(|_| PromptError::Invalid("bad radius".into()))?,
                })
            }
            "box" => {
                let (mn, mx) = (w.min.unwrap(), w.max.unwrap());
                PromptKind::Box(BoxPrompt {
                    slice: non_negative(w.slice.unwrap(), "slice")?,
                    min: [non_negative(mn[0], "y")?, non_negative(mn[1], "x")?],
                    max: [non_negative(mx[0], "y")?, non_negative(mx[1], "x")?],
                })
            }
            "lasso" => PromptKind::Lasso(LassoPrompt {
                slice: non_negative(w.slice.unwrap(), "slice")?,
                vertices: w.vertices.unwrap(),
            }),
            _ => {
                let vertices = w
                    .vertices
                    .unwrap()
                    .into_iter()
                    .map(|v| Ok([non_negative(v[0], "y")?, non_negative(v[1], "x")?]))
                    .collect::<Result<Vec<_>>>()?;
                PromptKind::Scribble(ScribblePrompt {
                    slice: non_negative(w.slice.unwrap(), "slice")?,
                    vertices,
                    thickness: u32::try_from(w.thickness.unwrap())
                        .map_err(|_| PromptError::Invalid("bad thickness".into()))?,
                })
            }
        };
        let prompt = Prompt { kind, polarity: w.polarity };
        prompt.check_shape()?;
        Ok(prompt)
    }
}

impl From<Prompt> for PromptWire {
    fn from(p: Prompt) -> Self {
        let mut w = PromptWire {
            kind: p.tag().name().to_string(),
            polarity: p.polarity,
            slice: None,
            center: None,
            radius: None,
            min: None,
            max: None,
            vertices: None,
            thickness: None,
        };
        match p.kind {
            PromptKind::Point(pt) => {
                w.center = Some(pt.center.map(|v| v as i64));
                w.radius = Some(pt.radius as i64);
            }
            PromptKind::Box(b) => {
                w.slice = Some(b.slice as i64);
                w.min = Some(b.min.map(|v| v as i64));
                w.max = Some(b.max.map(|v| v as i64));
            }
            PromptKind::Lasso(l) => {
                w.slice = Some(l.slice as i64);
                w.vertices = Some(l.vertices);
            }
            PromptKind::Scribble(s) => {
                w.slice = Some(s.slice as i64);
                w.vertices = Some(s.vertices.into_iter().map(|v| v.map(|c| c as i64)).collect());
                w.thickness = Some(s.thickness as i64);
            }
        }
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_each_kind() {
        let prompts = [
            Prompt::point([1, 2, 3], 2, Polarity::Positive),
            Prompt::bbox(4, [1, 2], [5, 6], Polarity::Negative),
            Prompt::lasso(2, vec![[0, 0], [0, 4], [4, 4], [4, 0]], Polarity::Positive),
            Prompt::scribble(3, vec![[1, 1], [2, 2], [2, 3]], 1, Polarity::Positive),
        ];
        for p in prompts {
            assert_eq!(Prompt::from_json(&p.to_json()).unwrap(), p);
        }
    }

    #[test]
    fn json_shape() {
        let p = Prompt::point([1, 2, 3], 2, Polarity::Positive);
        assert_eq!(p.to_json(), r#"{"kind":"point","polarity":"positive","center":[1,2,3],"radius":2}"#);
    }

    #[test]
    fn json_rejects_foreign_or_missing_fields() {
        for bad in [
            r#"{"kind":"point","polarity":"positive","center":[1,2,3]}"#,
            r#"{"kind":"point","polarity":"positive","center":[1,2,3],"radius":1,"slice":2}"#,
            r#"{"kind":"blob","polarity":"positive"}"#,
            r#"{"kind":"box","polarity":"sideways","slice":1,"min":[0,0],"max":[2,2]}"#,
            r#"{"kind":"box","polarity":"positive","slice":1,"min":[3,0],"max":[2,2]}"#,
            r#"{"kind":"point","polarity":"positive","center":[-1,2,3],"radius":1}"#,
            r#"{"kind":"lasso","polarity":"positive","slice":0,"vertices":[[0,0],[4,4],[0,4],[4,0]]}"#,
            r#"{"kind":"point","polarity":"positive","center":[1,2,3],"radius":1,"color":"red"}"#,
        ] {
            assert!(Prompt::from_json(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn validate_bounds() {
        let shape = [4, 8, 8];
        assert!(Prompt::point([3, 7, 7], 1, Polarity::Positive).validate(shape).is_ok());
        assert!(matches!(Prompt::point([4, 0, 0], 1, Polarity::Positive).validate(shape), Err(PromptError::OutOfBounds(_))));
        assert!(Prompt::bbox(0, [0, 0], [8, 8], Polarity::Positive).validate(shape).is_ok());
        assert!(Prompt::bbox(0, [0, 0], [9, 8], Polarity::Positive).validate(shape).is_err());
        assert!(Prompt::lasso(0, vec![[0, 0], [0, 8], [8, 8], [8, 0]], Polarity::Positive).validate(shape).is_ok());
        assert!(Prompt::lasso(0, vec![[0, 0], [0, 9], [8, 8], [8, 0]], Polarity::Positive).validate(shape).is_err());
    }
}
