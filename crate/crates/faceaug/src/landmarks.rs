//! 2D facial landmark sets and the text file format they are read from.
//!
//! The only schema shipped is `face68`, the common 68-point layout:
//! slots 0..=16 jaw contour, 17..=26 eyebrows, 27..=35 nose, 36..=41
//! right eye, 42..=47 left eye, 48..=67 mouth.

use std::fmt;
use std::path::Path;
use thiserror::Error;

/// Number of slots in the `face68` schema.
pub const FACE68_POINTS: usize = 68;

/// Slot index of the nose tip in `face68`.
pub const SLOT_NOSE_TIP: usize = 30;
/// Slot index of the chin in `face68`.
pub const SLOT_CHIN: usize = 8;
/// Nose bridge (top of the nose).
pub const SLOT_NOSE_BRIDGE: usize = 27;
/// Outer corner of the right eye (subject's right, image left).
pub const SLOT_RIGHT_EYE_OUTER: usize = 36;
/// Inner corner of the right eye.
pub const SLOT_RIGHT_EYE_INNER: usize = 39;
/// Inner corner of the left eye.
pub const SLOT_LEFT_EYE_INNER: usize = 42;
/// Outer corner of the left eye.
pub const SLOT_LEFT_EYE_OUTER: usize = 45;
/// Right mouth corner.
pub const SLOT_MOUTH_RIGHT: usize = 48;
/// Left mouth corner.
pub const SLOT_MOUTH_LEFT: usize = 54;

/// Mouth-region slots used for expression fitting (outer + inner lips).
pub const MOUTH_SLOTS: std::ops::Range<usize> = 48..68;

/// The nine slots aligned against the frontal template: four eye corners,
/// nose bridge, nose tip, two mouth corners and the chin.
pub const FRONTAL9_SLOTS: [usize; 9] = [
    SLOT_RIGHT_EYE_OUTER,
    SLOT_RIGHT_EYE_INNER,
    SLOT_LEFT_EYE_INNER,
    SLOT_LEFT_EYE_OUTER,
    SLOT_NOSE_BRIDGE,
    SLOT_NOSE_TIP,
    SLOT_MOUTH_RIGHT,
    SLOT_MOUTH_LEFT,
    SLOT_CHIN,
];

/// Landmark schema identifier. Only `face68` is currently defined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schema {
    Face68,
}

impl Schema {
    pub fn point_count(&self) -> usize {
        match self {
            Schema::Face68 => FACE68_POINTS,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Schema::Face68 => "face68",
        }
    }

    pub fn from_name(name: &str) -> Option<Schema> {
        match name {
            "face68" => Some(Schema::Face68),
            _ => None,
        }
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum LandmarkError {
    #[error("unknown landmark schema {0:?}")]
    UnknownSchema(String),
    #[error("expected {expected} points for schema, got {got}")]
    WrongPointCount { expected: usize, got: usize },
    #[error("non-finite coordinate at slot {0}")]
    NonFinite(usize),
    #[error("slot index {0} out of range")]
    SlotOutOfRange(usize),
    #[error("malformed landmark file line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// An ordered set of 2D landmarks under a fixed schema, with per-point
/// visibility.
#[derive(Debug, Clone)]
pub struct LandmarkSet2D {
    pub schema: Schema,
    points: Vec<[f64; 2]>,
    visible: Vec<bool>,
}

impl LandmarkSet2D {
    pub fn new(
        schema: Schema,
        points: Vec<[f64; 2]>,
        visible: Vec<bool>,
    ) -> Result<Self, LandmarkError> {
        if points.len() != schema.point_count() || visible.len() != schema.point_count() {
            return Err(LandmarkError::WrongPointCount {
                expected: schema.point_count(),
                got: points.len(),
            });
        }
        for (i, p) in points.iter().enumerate() {
            if !p[0].is_finite() || !p[1].is_finite() {
                return Err(LandmarkError::NonFinite(i));
            }
        }
        Ok(LandmarkSet2D {
            schema,
            points,
            visible,
        })
    }

    /// All points visible.
    pub fn all_visible(schema: Schema, points: Vec<[f64; 2]>) -> Result<Self, LandmarkError> {
        let n = points.len();
        LandmarkSet2D::new(schema, points, vec![true; n])
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, slot: usize) -> [f64; 2] {
        self.points[slot]
    }

    pub fn is_visible(&self, slot: usize) -> bool {
        self.visible[slot]
    }

    pub fn set_visible(&mut self, slot: usize, v: bool) {
        self.visible[slot] = v;
    }

    pub fn visible_count(&self) -> usize {
        self.visible.iter().filter(|v| **v).count()
    }

    /// Iterate (slot, point) over visible landmarks.
    pub fn visible_points(&self) -> impl Iterator<Item = (usize, [f64; 2])> + '_ {
        self.points
            .iter()
            .enumerate()
            .filter(|(i, _)| self.visible[*i])
            .map(|(i, p)| (i, *p))
    }

    /// Parse the landmark text format: a `schema=<name>` header line then
    /// `index u v visible` rows, whitespace separated.
    pub fn parse(text: &str) -> Result<Self, LandmarkError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| {
            let t = l.trim();
            !t.is_empty() && !t.starts_with('#')
        });
        let (hline, header) = lines.next().ok_or_else(|| LandmarkError::Malformed {
            line: 0,
            reason: "empty file".into(),
        })?;
        let schema_name = header
            .trim()
            .strip_prefix("schema=")
            .ok_or_else(|| LandmarkError::Malformed {
                line: hline + 1,
                reason: "missing schema= header".into(),
            })?;
        let schema = Schema::from_name(schema_name)
            .ok_or_else(|| LandmarkError::UnknownSchema(schema_name.to_string()))?;

        let n = schema.point_count();
        let mut points = vec![[f64::NAN; 2]; n];
        let mut visible = vec![false; n];
        let mut seen = vec![false; n];
        for (lno, line) in lines {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(LandmarkError::Malformed {
                    line: lno + 1,
                    reason: format!("expected 4 fields, got {}", fields.len()),
                });
            }
            let bad = |reason: &str| LandmarkError::Malformed {
                line: lno + 1,
                reason: reason.into(),
            };
            let idx: usize = fields[0].parse().map_err(|_| bad("bad index"))?;
            if idx >= n {
                return Err(LandmarkError::SlotOutOfRange(idx));
            }
            let u: f64 = fields[1].parse().map_err(|_| bad("bad u"))?;
            let v: f64 = fields[2].parse().map_err(|_| bad("bad v"))?;
            let vis = match fields[3] {
                "0" => false,
                "1" => true,
                _ => return Err(bad("visible flag must be 0 or 1")),
            };
            points[idx] = [u, v];
            visible[idx] = vis;
            seen[idx] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(LandmarkError::Malformed {
                line: 0,
                reason: format!("slot {missing} missing"),
            });
        }
        LandmarkSet2D::new(schema, points, visible)
    }

    pub fn load(path: &Path) -> Result<Self, LandmarkError> {
        let text = std::fs::read_to_string(path)?;
        LandmarkSet2D::parse(&text)
    }

    pub fn serialize(&self) -> String {
        let mut out = format!("schema={}\n", self.schema.name());
        for (i, p) in self.points.iter().enumerate() {
            out.push_str(&format!(
                "{} {} {} {}\n",
                i,
                p[0],
                p[1],
                if self.visible[i] { 1 } else { 0 }
            ));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), LandmarkError> {
        std::fs::write(path, self.serialize())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_round_trip() {
        let pts: Vec<[f64; 2]> = (0..68).map(|i| [i as f64, i as f64 * 2.0]).collect();
        let mut lm = LandmarkSet2D::all_visible(Schema::Face68, pts).unwrap();
        lm.set_visible(5, false);
        let text = lm.serialize();
        let back = LandmarkSet2D::parse(&text).unwrap();
        assert_eq!(back.len(), 68);
        assert_eq!(back.point(7), [7.0, 14.0]);
        assert!(!back.is_visible(5));
        assert_eq!(back.visible_count(), 67);
    }

    #[test]
    fn missing_slot_rejected() {
        let mut text = String::from("schema=face68\n");
        for i in 0..67 {
            text.push_str(&format!("{i} 0 0 1\n"));
        }
        assert!(LandmarkSet2D::parse(&text).is_err());
    }

    #[test]
    fn bad_header_rejected() {
        assert!(LandmarkSet2D::parse("0 1 2 1\n").is_err());
        assert!(LandmarkSet2D::parse("schema=face99\n").is_err());
    }

    #[test]
    fn non_finite_rejected() {
        let mut pts: Vec<[f64; 2]> = (0..68).map(|_| [0.0, 0.0]).collect();
        pts[3][0] = f64::NAN;
        assert!(LandmarkSet2D::all_visible(Schema::Face68, pts).is_err());
    }
}
