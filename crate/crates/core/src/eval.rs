//! Paired evaluation of both translation directions and the CSV report.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::data::{
    lesion_preservation_iou, neighborhood_preservation, pair_scores, Domain, Image8, PairScores, TestPair,
};
use crate::error::{Error, Result};
use crate::features::Extractor;
use crate::smooth::max_pairs;
use crate::tensor::Real;
use crate::train::ModelState;

pub const REPORT_HEADER: [&str; 8] = ["id", "direction", "mae", "mse", "psnr", "ssim", "lesion_iou", "neighborhood"];
/// `id` of the aggregate rows.
pub const MEAN_ID: &str = "mean";
pub const DEFAULT_K_TOP: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    /// A -> B through `G`.
    AB,
    /// B -> A through `F`.
    BA,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::AB, Direction::BA];

    pub fn target(self) -> Domain {
        match self {
            Direction::AB => Domain::B,
            Direction::BA => Domain::A,
        }
    }

    /// `(source, truth)` images of a test pair.
    pub fn split(self, pair: &TestPair) -> (&Image8, &Image8) {
        match self {
            Direction::AB => (&pair.a, &pair.b),
            Direction::BA => (&pair.b, &pair.a),
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::AB => "ab",
            Direction::BA => "ba",
        })
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ab" => Ok(Direction::AB),
            "ba" => Ok(Direction::BA),
            _ => Err(Error::invalid(format!("direction must be ab or ba, got {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub id: String,
    pub direction: Direction,
    pub scores: PairScores,
    pub lesion_iou: f64,
    pub neighborhood: f64,
}

impl EvalRow {
    fn values(&self) -> [f64; 6] {
        let s = &self.scores;
        [s.mae, s.mse, s.psnr, s.ssim, self.lesion_iou, self.neighborhood]
    }

    pub fn record(&self) -> Vec<String> {
        let mut r = vec![self.id.clone(), self.direction.to_string()];
        r.extend(self.values().iter().map(f64::to_string));
        r
    }
}

/// Scores `translate` on every test pair in both directions, rows ordered
/// by pair then direction. `k_top` is capped at the number of patch pairs.
pub fn evaluate(
    test: &[TestPair],
    extractor: &Extractor,
    patch: usize,
    k_top: usize,
    mut translate: impl FnMut(Direction, &Image8) -> Result<Image8>,
) -> Result<Vec<EvalRow>> {
    let mut rows = Vec::with_capacity(2 * test.len());
    for pair in test {
        for dir in Direction::BOTH {
            let (source, truth) = dir.split(pair);
            let out = translate(dir, source)?;
            let pairs = max_pairs((source.height / patch) * (source.width / patch));
            rows.push(EvalRow {
                id: pair.id.clone(),
                direction: dir,
                scores: pair_scores(&out, truth)?,
                lesion_iou: lesion_preservation_iou(&out, truth, dir.target())?,
                neighborhood: neighborhood_preservation(source, &out, k_top.min(pairs), extractor, patch)?,
            });
        }
    }
    Ok(rows)
}

/// Scores a trained model; neighbourhoods use the model's own extractor.
pub fn evaluate_model<T: Real>(state: &ModelState<T>, test: &[TestPair], k_top: usize) -> Result<Vec<EvalRow>> {
    evaluate(test, &state.extractor, state.config.patch_size, k_top, |dir, img| {
        let net = match dir {
            Direction::AB => &state.g,
            Direction::BA => &state.f,
        };
        Image8::from_tensor(&net.translate(&img.to_tensor::<T>())?)
    })
}

/// One mean row per direction.
pub fn aggregate(rows: &[EvalRow]) -> Result<Vec<EvalRow>> {
    Direction::BOTH
        .iter()
        .map(|&dir| {
            let sel: Vec<[f64; 6]> = rows.iter().filter(|r| r.direction == dir).map(EvalRow::values).collect();
            if sel.is_empty() {
                return Err(Error::invalid(format!("no rows for direction {dir}")));
            }
            let mean = |k: usize| sel.iter().map(|v| v[k]).sum::<f64>() / sel.len() as f64;
            Ok(EvalRow {
                id: MEAN_ID.into(),
                direction: dir,
                scores: PairScores { mae: mean(0), mse: mean(1), psnr: mean(2), ssim: mean(3) },
                lesion_iou: mean(4),
                neighborhood: mean(5),
            })
        })
        .collect()
}

/// Per-image rows followed by the aggregates.
pub fn write_report(path: &Path, rows: &[EvalRow]) -> Result<()> {
    let err = |e: csv::Error| Error::format(path, e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(REPORT_HEADER).map_err(err)?;
    for r in rows.iter().chain(&aggregate(rows)?) {
        w.write_record(r.record()).map_err(err)?;
    }
    w.flush()?;
    Ok(())
}
