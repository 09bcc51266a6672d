//! Datasets: two-spirals generation, CSV I/O, standardization, splitting.
//!
//! CSV schema: header `x1,...,xd,label`, one example per row, integer class
//! ids. Features are written with 17 significant digits so a save/load
//! cycle is lossless.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Features with one-hot labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Array2<f64>,
    /// Integer id of each one-hot column, ascending.
    class_ids: Vec<i64>,
    class_names: Option<Vec<String>>,
}

impl Dataset {
    /// Builds a dataset from class indices `0..n_classes`.
    pub fn from_class_indices(
        features: Array2<f64>,
        classes: &[usize],
        n_classes: usize,
    ) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(Error::EmptyDataset);
        }
        if classes.len() != features.nrows() {
            return Err(Error::shape(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                classes.len()
            )));
        }
        if let Some(&c) = classes.iter().find(|&&c| c >= n_classes) {
            return Err(Error::Domain(format!("class {c} outside 0..{n_classes}")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite feature value".into()));
        }
        let mut labels = Array2::zeros((classes.len(), n_classes));
        for (i, &c) in classes.iter().enumerate() {
            labels[[i, c]] = 1.0;
        }
        Ok(Dataset {
            features,
            labels,
            class_ids: (0..n_classes as i64).collect(),
            class_names: None,
        })
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_classes() {
            return Err(Error::shape(format!(
                "{} class names for {} classes",
                names.len(),
                self.n_classes()
            )));
        }
        self.class_names = Some(names);
        Ok(self)
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn labels(&self) -> ArrayView2<'_, f64> {
        self.labels.view()
    }

    pub fn class_ids(&self) -> &[i64] {
        &self.class_ids
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.labels.ncols()
    }

    /// Class index (one-hot column) of every row.
    pub fn classes(&self) -> Vec<usize> {
        self.labels
            .outer_iter()
            .map(|row| row.iter().position(|&v| v == 1.0).expect("one-hot row"))
            .collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for c in self.classes() {
            counts[c] += 1;
        }
        counts
    }

    /// Rows `idx` in the given order, keeping the class layout.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), idx),
            labels: self.labels.select(Axis(0), idx),
            class_ids: self.class_ids.clone(),
            class_names: self.class_names.clone(),
        }
    }

    fn with_features(&self, features: Array2<f64>) -> Dataset {
        Dataset {
            features,
            labels: self.labels.clone(),
            class_ids: self.class_ids.clone(),
            class_names: self.class_names.clone(),
        }
    }
}

/// Two interleaved spirals in the plane.
///
/// A class-`c` point has angle `θ ~ U[0, 2π·turns]`, radius
/// `θ / (2π·turns)` and position `r·(cos(θ + cπ), sin(θ + cπ))`, plus
/// isotropic Gaussian noise of standard deviation `noise_std`.
/// Rows are ordered class 0 first, then class 1.
pub fn gen_spirals(n_per_class: usize, noise_std: f64, turns: f64, seed: u64) -> Result<Dataset> {
    if n_per_class == 0 {
        return Err(Error::EmptyDataset);
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::config(format!(
            "noise_std must be >= 0, got {noise_std}"
        )));
    }
    if !(turns > 0.0 && turns.is_finite()) {
        return Err(Error::config(format!(
            "turns must be positive, got {turns}"
        )));
    }
    let mut rng = RngStream::new(seed);
    let span = 2.0 * std::f64::consts::PI * turns;
    let n = 2 * n_per_class;
    let mut features = Array2::zeros((n, 2));
    let mut classes = Vec::with_capacity(n);
    for c in 0..2 {
        for k in 0..n_per_class {
            let theta = rng.gen::<f64>() * span;
            let r = theta / span;
            let phase = theta + c as f64 * std::f64::consts::PI;
            let (nx, ny) = if noise_std > 0.0 {
                (
                    noise_std * rng.sample::<f64, _>(StandardNormal),
                    noise_std * rng.sample::<f64, _>(StandardNormal),
                )
            } else {
                (0.0, 0.0)
            };
            let row = c * n_per_class + k;
            features[[row, 0]] = r * phase.cos() + nx;
            features[[row, 1]] = r * phase.sin() + ny;
            classes.push(c);
        }
    }
    Dataset::from_class_indices(features, &classes, 2)
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads the `x1,...,xd,label` CSV schema; labels are one-hot encoded over
/// the observed class ids in ascending order.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header = reader
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    let width = header.len();
    if width < 2 {
        return Err(parse_err(
            path,
            1,
            "header needs at least one feature and a label",
        ));
    }
    let d = width - 1;
    for (j, name) in header.iter().enumerate() {
        let want = if j == d {
            "label".to_string()
        } else {
            format!("x{}", j + 1)
        };
        if name != want {
            return Err(parse_err(
                path,
                1,
                format!("unexpected header column {name:?}, expected {want:?}"),
            ));
        }
    }

    let mut flat = Vec::new();
    let mut raw_labels = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != width {
            return Err(parse_err(
                path,
                line,
                format!("expected {width} fields, found {}", rec.len()),
            ));
        }
        for (j, field) in rec.iter().take(d).enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                parse_err(
                    path,
                    line,
                    format!("x{} = {field:?} is not a number", j + 1),
                )
            })?;
            if !v.is_finite() {
                return Err(parse_err(
                    path,
                    line,
                    format!("x{} = {field:?} is not finite", j + 1),
                ));
            }
            flat.push(v);
        }
        let label_field = &rec[d];
        let label: i64 = label_field.parse().map_err(|_| {
            parse_err(
                path,
                line,
                format!("label {label_field:?} is not an integer"),
            )
        })?;
        raw_labels.push(label);
    }
    if raw_labels.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let class_ids: Vec<i64> = raw_labels
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let classes: Vec<usize> = raw_labels
        .iter()
        .map(|l| class_ids.binary_search(l).expect("observed id"))
        .collect();
    let features = Array2::from_shape_vec((raw_labels.len(), d), flat)
        .map_err(|e| Error::shape(e.to_string()))?;
    let mut ds = Dataset::from_class_indices(features, &classes, class_ids.len())?;
    ds.class_ids = class_ids;
    Ok(ds)
}

pub fn write_csv<W: Write>(ds: &Dataset, mut out: W) -> std::io::Result<()> {
    let header: Vec<String> = (1..=ds.dim())
        .map(|j| format!("x{j}"))
        .chain(std::iter::once("label".into()))
        .collect();
    writeln!(out, "{}", header.join(","))?;
    for (row, c) in ds.features.outer_iter().zip(ds.classes()) {
        for v in row.iter() {
            write!(out, "{v:.16e},")?;
        }
        writeln!(out, "{}", ds.class_ids[c])?;
    }
    Ok(())
}

pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_csv(ds, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Per-feature moments of a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizeStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

const STD_FLOOR: f64 = 1e-8;

/// Centers and scales every feature to zero mean and unit (population)
/// standard deviation; constant features map to zero.
pub fn standardize(train: &Dataset) -> (Dataset, StandardizeStats) {
    let n = train.len() as f64;
    let mean: Array1<f64> = train.features.sum_axis(Axis(0)) / n;
    let centered = &train.features - &mean;
    let std = centered
        .map_axis(Axis(0), |col| {
            (col.iter().map(|v| v * v).sum::<f64>() / n).sqrt()
        })
        .mapv(|s| if s > STD_FLOOR { s } else { STD_FLOOR });
    let stats = StandardizeStats {
        mean: mean.to_vec(),
        std: std.to_vec(),
    };
    (train.with_features(centered / &std), stats)
}

pub fn apply_stats(ds: &Dataset, stats: &StandardizeStats) -> Result<Dataset> {
    Ok(ds.with_features(apply_stats_to_features(ds.features(), stats)?))
}

pub fn apply_stats_to_features(
    features: ArrayView2<f64>,
    stats: &StandardizeStats,
) -> Result<Array2<f64>> {
    if stats.mean.len() != features.ncols() || stats.std.len() != features.ncols() {
        return Err(Error::shape(format!(
            "stats for {} features applied to {}",
            stats.mean.len(),
            features.ncols()
        )));
    }
    if stats.std.iter().any(|&s| s.is_nan() || s <= 0.0) {
        return Err(Error::Domain("standard deviations must be positive".into()));
    }
    let mean = Array1::from(stats.mean.clone());
    let std = Array1::from(stats.std.clone());
    Ok((&features - &mean) / &std)
}

/// Stratified split: each class contributes `round(count·test_fraction)`
/// rows to the test side. Both sides keep the input's row order.
pub fn split(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::config(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let mut rng = RngStream::new(seed);
    let mut by_class = vec![Vec::new(); ds.n_classes()];
    for (i, c) in ds.classes().into_iter().enumerate() {
        by_class[c].push(i);
    }
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for (c, mut idx) in by_class.into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        let n_test = (idx.len() as f64 * test_fraction).round() as usize;
        if n_test == 0 || n_test == idx.len() {
            return Err(Error::config(format!(
                "class {} has {} rows; test_fraction {test_fraction} leaves one side empty",
                ds.class_ids[c],
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        test_idx.extend_from_slice(&idx[..n_test]);
        train_idx.extend_from_slice(&idx[n_test..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((ds.select(&train_idx), ds.select(&test_idx)))
}
