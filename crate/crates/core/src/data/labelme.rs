//! Labelme per-image annotation documents.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::labelmap::LabelMap;
use super::raster::LabeledPolygon;
use crate::error::{Error, Result};

#[derive(Debug, Deserialize)]
struct RawShape {
    label: Option<String>,
    points: Option<Vec<Vec<f64>>>,
    // Older files omit the type; those shapes are polygons.
    shape_type: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawDoc {
    shapes: Option<Vec<RawShape>>,
    image_path: Option<String>,
    image_height: Option<u64>,
    image_width: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Shape {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub image_path: Option<String>,
    pub height: usize,
    pub width: usize,
    pub shapes: Vec<Shape>,
}

/// What to do with a label missing from the label map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LabelPolicy {
    #[default]
    Error,
    Skip,
}

pub fn parse_annotation_file(path: &Path) -> Result<Annotation> {
    let text = std::fs::read_to_string(path)?;
    parse_annotation_str(&text, path)
}

/// `path` is only used in error messages.
pub fn parse_annotation_str(text: &str, path: &Path) -> Result<Annotation> {
    let bad = |detail: String| Error::Annotation {
        path: path.to_path_buf(),
        detail,
    };
    let doc: RawDoc = serde_json::from_str(text).map_err(|e| bad(format!("malformed document: {e}")))?;
    let height = doc.image_height.ok_or_else(|| bad("missing imageHeight".into()))? as usize;
    let width = doc.image_width.ok_or_else(|| bad("missing imageWidth".into()))? as usize;
    if height == 0 || width == 0 {
        return Err(bad(format!("zero image extent {height}x{width}")));
    }
    let raw = doc.shapes.ok_or_else(|| bad("missing shapes array".into()))?;
    let mut shapes = Vec::with_capacity(raw.len());
    for (i, s) in raw.into_iter().enumerate() {
        let ty = s.shape_type.unwrap_or_else(|| "polygon".into());
        if ty != "polygon" {
            return Err(Error::UnsupportedShape {
                path: path.to_path_buf(),
                shape_type: ty,
            });
        }
        let label = s.label.ok_or_else(|| bad(format!("shape {i} has no label")))?;
        let points = s
            .points
            .ok_or_else(|| bad(format!("shape {i} has no points")))?
            .into_iter()
            .map(|p| match p[..] {
                [x, y] if x.is_finite() && y.is_finite() => Ok((x, y)),
                _ => Err(bad(format!("shape {i} has a malformed point {p:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        shapes.push(Shape { label, points });
    }
    Ok(Annotation {
        image_path: doc.image_path,
        height,
        width,
        shapes,
    })
}

impl Annotation {
    /// Maps labels to indices, keeping file order.
    pub fn resolve(&self, map: &LabelMap, policy: LabelPolicy, path: &Path) -> Result<Vec<LabeledPolygon>> {
        let mut out = Vec::with_capacity(self.shapes.len());
        for s in &self.shapes {
            match (map.get(&s.label), policy) {
                (Some(idx), _) => out.push((idx, s.points.clone())),
                (None, LabelPolicy::Skip) => {
                    log::warn!("{}: skipping unknown label {:?}", path.display(), s.label)
                }
                (None, LabelPolicy::Error) => {
                    return Err(Error::UnknownLabel {
                        path: PathBuf::from(path),
                        label: s.label.clone(),
                    })
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(shapes: &str) -> String {
        format!(
            r#"{{"version":"5.2.1","flags":{{}},"shapes":[{shapes}],"imagePath":"a.png","imageData":null,"imageHeight":32,"imageWidth":32}}"#
        )
    }

    #[test]
    fn square_pulp() {
        let a = parse_annotation_str(
            &doc(r#"{"label":"Pulp","points":[[0,0],[10,0],[10,10],[0,10]],"group_id":null,"shape_type":"polygon","flags":{}}"#),
            Path::new("x.json"),
        )
        .unwrap();
        assert_eq!((a.height, a.width), (32, 32));
        assert_eq!(a.shapes.len(), 1);
        assert_eq!(a.shapes[0].label, "Pulp");
        assert_eq!(a.shapes[0].points[2], (10.0, 10.0));
    }

    #[test]
    fn empty_shapes() {
        let a = parse_annotation_str(&doc(""), Path::new("x.json")).unwrap();
        assert!(a.shapes.is_empty());
    }

    #[test]
    fn circle_rejected() {
        let e = parse_annotation_str(
            &doc(r#"{"label":"Pulp","points":[[0,0],[3,0]],"shape_type":"circle"}"#),
            Path::new("x.json"),
        )
        .unwrap_err();
        assert!(e.to_string().contains("circle"));
        assert!(matches!(e, Error::UnsupportedShape { .. }));
    }

    #[test]
    fn missing_dimensions() {
        let e = parse_annotation_str(r#"{"shapes":[]}"#, Path::new("x.json")).unwrap_err();
        assert!(e.to_string().contains("imageHeight"));
        assert!(parse_annotation_str("{not json", Path::new("x.json")).is_err());
    }

    #[test]
    fn unknown_label_policy() {
        let a = parse_annotation_str(
            &doc(r#"{"label":"Caries","points":[[0,0],[3,0],[3,3]],"shape_type":"polygon"}"#),
            Path::new("x.json"),
        )
        .unwrap();
        let m = LabelMap::default();
        let e = a.resolve(&m, LabelPolicy::Error, Path::new("x.json")).unwrap_err();
        assert!(e.to_string().contains("Caries") && e.to_string().contains("x.json"));
        assert!(a
            .resolve(&m, LabelPolicy::Skip, Path::new("x.json"))
            .unwrap()
            .is_empty());
    }
}
