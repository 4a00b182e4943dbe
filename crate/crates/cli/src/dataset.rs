//! Two-feature binary datasets: CSV loading/saving and a separable
//! synthetic generator.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;
use tinyflow::model::features;
use tinyflow::Tensor64;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {0}: label must be 0 or 1")]
    BadLabel(usize),
    #[error("dataset has no rows")]
    Empty,
    #[error("dataset contains only class {0}; training needs both classes")]
    SingleClass(u8),
}

/// Features `x` (`[n, 2]`) and labels `z` (`[n]`, each 0.0 or 1.0).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Tensor64,
    pub z: Tensor64,
}

impl Dataset {
    pub fn from_rows(rows: &[[f64; 2]], labels: Vec<f64>) -> Self {
        assert_eq!(rows.len(), labels.len());
        Dataset {
            x: features(rows),
            z: Tensor64::vector(labels),
        }
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    /// Errors unless both labels occur.
    pub fn require_both_classes(&self) -> Result<(), DataError> {
        if self.is_empty() {
            return Err(DataError::Empty);
        }
        let ones = self.z.data().iter().filter(|&&v| v == 1.0).count();
        match ones {
            0 => Err(DataError::SingleClass(0)),
            n if n == self.len() => Err(DataError::SingleClass(1)),
            _ => Ok(()),
        }
    }

    /// CSV text with header `x1,x2,label`. Floats use the shortest
    /// representation that parses back to the same bits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x1,x2,label\n");
        for i in 0..self.len() {
            let _ = writeln!(
                out,
                "{},{},{}",
                self.x.at(i, 0),
                self.x.at(i, 1),
                self.z.data()[i]
            );
        }
        out
    }
}

fn read(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn parse_field(field: &str, line: usize, what: &str) -> Result<f64, DataError> {
    field.trim().parse::<f64>().map_err(|_| DataError::Parse {
        line,
        msg: format!("{what} `{}` is not a number", field.trim()),
    })
}

fn has_header(first: Option<&str>) -> bool {
    first
        .and_then(|l| l.split(',').next())
        .is_some_and(|f| f.trim().parse::<f64>().is_err())
}

/// Parses `f1,f2,label` rows; a first line whose first field is not numeric
/// is treated as a header. Line numbers in errors are 1-based file lines.
pub fn parse_csv(text: &str) -> Result<Dataset, DataError> {
    let lines: Vec<&str> = text.lines().collect();
    let skip = usize::from(has_header(lines.first().copied()));
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (idx, raw) in lines.iter().enumerate().skip(skip) {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != 3 {
            return Err(DataError::Parse {
                line,
                msg: format!("expected 3 fields, found {}", fields.len()),
            });
        }
        let f1 = parse_field(fields[0], line, "feature")?;
        let f2 = parse_field(fields[1], line, "feature")?;
        let label = parse_field(fields[2], line, "label")?;
        if label != 0.0 && label != 1.0 {
            return Err(DataError::BadLabel(line));
        }
        rows.push([f1, f2]);
        labels.push(label);
    }
    if rows.is_empty() {
        return Err(DataError::Empty);
    }
    Ok(Dataset::from_rows(&rows, labels))
}

pub fn load_csv(path: &Path) -> Result<Dataset, DataError> {
    parse_csv(&read(path)?)
}

/// Reduces a five-column iris CSV (sepal length, sepal width, petal length,
/// petal width, species) to sepal features with label 1 for setosa and 0 for
/// the other two species.
pub fn parse_iris_setosa_vs_rest(text: &str) -> Result<Dataset, DataError> {
    let lines: Vec<&str> = text.lines().collect();
    let skip = usize::from(has_header(lines.first().copied()));
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (idx, raw) in lines.iter().enumerate().skip(skip) {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != 5 {
            return Err(DataError::Parse {
                line,
                msg: format!("expected 5 iris fields, found {}", fields.len()),
            });
        }
        let sepal_length = parse_field(fields[0], line, "sepal length")?;
        let sepal_width = parse_field(fields[1], line, "sepal width")?;
        let species = fields[4].trim().trim_matches('"').to_ascii_lowercase();
        rows.push([sepal_length, sepal_width]);
        labels.push(if species.contains("setosa") { 1.0 } else { 0.0 });
    }
    if rows.is_empty() {
        return Err(DataError::Empty);
    }
    Ok(Dataset::from_rows(&rows, labels))
}

pub fn load_iris_setosa_vs_rest(path: &Path) -> Result<Dataset, DataError> {
    parse_iris_setosa_vs_rest(&read(path)?)
}

/// The separating line used to generate a synthetic dataset: class 1 lies
/// on the side where `normal . (x - point) > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperplane {
    pub normal: [f64; 2],
    pub point: [f64; 2],
}

impl Hyperplane {
    pub fn signed_distance(&self, x: [f64; 2]) -> f64 {
        self.normal[0] * (x[0] - self.point[0]) + self.normal[1] * (x[1] - self.point[1])
    }
}

/// Same as [`gen_synthetic`], also returning the generating hyperplane.
///
/// A random unit direction and a midpoint in `[-1, 1]^2` define the plane.
/// Class centers sit `margin / 2` either side of it; points scatter around
/// them with standard deviation `margin / 4`, and any point closer than
/// `margin / 4` to the plane (or on the wrong side) is redrawn. Rows
/// alternate class 1, class 0.
pub fn gen_synthetic_with_plane(n: usize, seed: u64, margin: f64) -> (Dataset, Hyperplane) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let normal = [angle.cos(), angle.sin()];
    let point = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
    let plane = Hyperplane { normal, point };
    let spread = margin / 4.0;

    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let positive = i % 2 == 0;
        let side = if positive { 1.0 } else { -1.0 };
        let center = [
            point[0] + side * margin / 2.0 * normal[0],
            point[1] + side * margin / 2.0 * normal[1],
        ];
        let x = loop {
            let dx: f64 = StandardNormal.sample(&mut rng);
            let dy: f64 = StandardNormal.sample(&mut rng);
            let x = [center[0] + spread * dx, center[1] + spread * dy];
            if side * plane.signed_distance(x) >= margin / 4.0 {
                break x;
            }
        };
        rows.push(x);
        labels.push(if positive { 1.0 } else { 0.0 });
    }
    (Dataset::from_rows(&rows, labels), plane)
}

/// `n` points, half per class, linearly separable with a gap of at least
/// `margin / 2` between the classes.
pub fn gen_synthetic(n: usize, seed: u64, margin: f64) -> Dataset {
    gen_synthetic_with_plane(n, seed, margin).0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_plain_rows() {
        let d = parse_csv("1.0,2.0,1\n3.0,4.0,0\n").unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.x.data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(d.z.data(), &[1.0, 0.0]);
    }

    #[test]
    fn skips_header() {
        let d = parse_csv("sepal_length,sepal_width,label\n5.1,3.5,1.0\n").unwrap();
        assert_eq!(d.len(), 1);
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(matches!(
            parse_csv("1.0,2.0,2\n"),
            Err(DataError::BadLabel(1))
        ));
        assert!(matches!(
            parse_csv("a,b,c\n1,2,0\n1,x,0\n"),
            Err(DataError::Parse { line: 3, .. })
        ));
        assert!(matches!(
            parse_csv("1,2\n"),
            Err(DataError::Parse { line: 1, .. })
        ));
        assert!(matches!(parse_csv("x1,x2,label\n"), Err(DataError::Empty)));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_csv(Path::new("/nonexistent/data.csv")),
            Err(DataError::Io { .. })
        ));
    }

    #[test]
    fn iris_filter() {
        let text = "sepal_length,sepal_width,petal_length,petal_width,species\n\
                    5.1,3.5,1.4,0.2,setosa\n7.0,3.2,4.7,1.4,versicolor\n6.3,3.3,6.0,2.5,Iris-virginica\n";
        let d = parse_iris_setosa_vs_rest(text).unwrap();
        assert_eq!(d.x.data(), &[5.1, 3.5, 7.0, 3.2, 6.3, 3.3]);
        assert_eq!(d.z.data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn synthetic_small_and_deterministic() {
        let d = gen_synthetic(2, 9, 2.0);
        assert_eq!(d.z.data(), &[1.0, 0.0]);
        assert_eq!(gen_synthetic(50, 3, 1.5), gen_synthetic(50, 3, 1.5));
        assert_ne!(gen_synthetic(50, 3, 1.5), gen_synthetic(50, 4, 1.5));
    }

    #[test]
    fn synthetic_is_separated_by_its_plane() {
        let margin = 2.0;
        let (d, plane) = gen_synthetic_with_plane(100, 7, margin);
        assert_eq!(d.len(), 100);
        assert_eq!(d.z.data().iter().filter(|&&z| z == 1.0).count(), 50);
        for i in 0..d.len() {
            let s = plane.signed_distance([d.x.at(i, 0), d.x.at(i, 1)]);
            if d.z.data()[i] == 1.0 {
                assert!(s >= margin / 4.0);
            } else {
                assert!(s <= -margin / 4.0);
            }
        }
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let d = gen_synthetic(64, 1, 2.0);
        let back = parse_csv(&d.to_csv()).unwrap();
        assert_eq!(
            d.x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            back.x
                .data()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        );
        assert_eq!(d.z, back.z);
    }

    #[test]
    fn class_check() {
        let d = Dataset::from_rows(&[[0.0, 0.0]], vec![1.0]);
        assert!(matches!(
            d.require_both_classes(),
            Err(DataError::SingleClass(1))
        ));
    }
}
