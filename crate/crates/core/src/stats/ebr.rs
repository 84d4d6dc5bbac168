//! Eye-blink-rate ingestion.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::rank::rank_within_participant;
use super::table::CurveTable;
use super::StatsError;
use crate::curves::CurveId;

/// Blink count for one participant and one curve phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlinkRecord {
    pub participant_id: String,
    pub curve: CurveId,
    pub blink_count: u64,
    pub phase_duration_s: f64,
}

pub const BLINK_CSV_HEADER: [&str; 4] = ["participant_id", "curve", "blink_count", "phase_duration_s"];

/// Blinks per second.
pub fn compute_ebr(record: &BlinkRecord) -> Result<f64, StatsError> {
    let d = record.phase_duration_s;
    if !(d.is_finite() && d > 0.0) {
        return Err(StatsError::NonPositiveDuration(d));
    }
    Ok(record.blink_count as f64 / d)
}

pub fn parse_blink_csv(text: &str) -> Result<Vec<BlinkRecord>, StatsError> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| StatsError::Csv(e.to_string()))?;
    if header.iter().ne(BLINK_CSV_HEADER) {
        return Err(StatsError::Csv(format!(
            "expected header {}, got {}",
            BLINK_CSV_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for (line, rec) in r.deserialize::<BlinkRecord>().enumerate() {
        let rec = rec.map_err(|e| StatsError::Csv(format!("record {}: {e}", line + 1)))?;
        compute_ebr(&rec)?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_blink_csv(records: &[BlinkRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

/// EBR table laid out like `shape` (same participants and curves).
/// Every cell needs exactly one record; extra participants are ignored.
pub fn ebr_table(records: &[BlinkRecord], shape: &CurveTable) -> Result<CurveTable, StatsError> {
    let mut cells: BTreeMap<(&str, CurveId), f64> = BTreeMap::new();
    for r in records {
        if cells.insert((r.participant_id.as_str(), r.curve), compute_ebr(r)?).is_some() {
            return Err(StatsError::Csv(format!("duplicate blink record for {} / {}", r.participant_id, r.curve)));
        }
    }
    let mut values = Vec::with_capacity(shape.n_rows());
    for p in &shape.participants {
        let row = shape
            .curves
            .iter()
            .map(|&c| {
                cells
                    .get(&(p.as_str(), c))
                    .copied()
                    .ok_or_else(|| StatsError::ShapeMismatch(format!("no blink record for {p} / {c}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        values.push(row);
    }
    CurveTable::rates(shape.participants.clone(), shape.curves.clone(), values)
}

/// Synthetic blink records whose within-participant ranks are coupled to
/// the PSE ranks. `coupling` in [-1, 1]; negative means longer PSE, fewer blinks.
pub fn coupled_blink_records(pse: &CurveTable, coupling: f64, phase_duration_s: f64, seed: u64) -> Vec<BlinkRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = pse.n_cols() as f64;
    let centre = (k + 1.0) / 2.0;
    let spread = ((k * k - 1.0) / 12.0).sqrt().max(f64::MIN_POSITIVE);
    let noise = (1.0 - coupling * coupling).max(0.0).sqrt();
    let mut out = Vec::with_capacity(pse.n_rows() * pse.n_cols());
    for (p, row) in pse.participants.iter().zip(&pse.values) {
        let b: f64 = StandardNormal.sample(&mut rng);
        let base = 0.3 + 0.05 * b;
        for (&curve, r) in pse.curves.iter().zip(rank_within_participant(row)) {
            let e: f64 = StandardNormal.sample(&mut rng);
            let z = coupling * (r - centre) / spread + noise * e;
            let rate = (base + 0.05 * z).max(0.0);
            out.push(BlinkRecord {
                participant_id: p.clone(),
                curve,
                blink_count: (rate * phase_duration_s).round() as u64,
                phase_duration_s,
            });
        }
    }
    out
}
