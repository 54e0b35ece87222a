use std::io::Write;
use std::path::Path;

use crate::energy::LayerEnergy;
use crate::error::{Error, Result};

pub const METRICS_HEADER: [&str; 15] = [
    "epoch",
    "split",
    "layer",
    "accuracy",
    "macro_precision",
    "macro_recall",
    "macro_f1",
    "loss",
    "ops",
    "spikes",
    "neurons",
    "samples",
    "rate",
    "e_ann_pj",
    "e_snn_pj",
];

/// One CSV line. Whole-network rows carry classification metrics; per-layer
/// rows leave them empty.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub split: String,
    pub layer: String,
    pub accuracy: Option<f64>,
    pub macro_precision: Option<f64>,
    pub macro_recall: Option<f64>,
    pub macro_f1: Option<f64>,
    pub loss: Option<f64>,
    pub ops: u64,
    pub spikes: f64,
    pub neurons: u64,
    pub samples: u64,
    pub rate: f64,
    pub e_ann_pj: f64,
    pub e_snn_pj: f64,
}

impl MetricsRow {
    pub fn from_energy(epoch: usize, split: &str, energy: &LayerEnergy) -> Self {
        Self {
            epoch,
            split: split.to_string(),
            layer: energy.layer.clone(),
            accuracy: None,
            macro_precision: None,
            macro_recall: None,
            macro_f1: None,
            loss: None,
            ops: energy.ops,
            spikes: energy.spikes,
            neurons: energy.neurons,
            samples: energy.samples,
            rate: energy.rate,
            e_ann_pj: energy.e_ann_pj,
            e_snn_pj: energy.e_snn_pj,
        }
    }

    fn record(&self) -> Vec<String> {
        let f = |v: f64| format!("{v:.6}");
        let opt = |v: Option<f64>| v.map(f).unwrap_or_default();
        vec![
            self.epoch.to_string(),
            self.split.clone(),
            self.layer.clone(),
            opt(self.accuracy),
            opt(self.macro_precision),
            opt(self.macro_recall),
            opt(self.macro_f1),
            opt(self.loss),
            self.ops.to_string(),
            f(self.spikes),
            self.neurons.to_string(),
            self.samples.to_string(),
            f(self.rate),
            f(self.e_ann_pj),
            f(self.e_snn_pj),
        ]
    }

    fn parse(rec: &csv::StringRecord) -> Result<Self> {
        if rec.len() != METRICS_HEADER.len() {
            return Err(Error::Data(format!(
                "metrics row has {} fields, expected {}",
                rec.len(),
                METRICS_HEADER.len()
            )));
        }
        let field = |i: usize| &rec[i];
        fn num<T: std::str::FromStr>(s: &str, name: &str) -> Result<T> {
            s.parse()
                .map_err(|_| Error::Data(format!("column {name}: cannot parse `{s}`")))
        }
        let opt = |i: usize| -> Result<Option<f64>> {
            let s = field(i);
            if s.is_empty() {
                Ok(None)
            } else {
                num(s, METRICS_HEADER[i]).map(Some)
            }
        };
        Ok(Self {
            epoch: num(field(0), "epoch")?,
            split: field(1).to_string(),
            layer: field(2).to_string(),
            accuracy: opt(3)?,
            macro_precision: opt(4)?,
            macro_recall: opt(5)?,
            macro_f1: opt(6)?,
            loss: opt(7)?,
            ops: num(field(8), "ops")?,
            spikes: num(field(9), "spikes")?,
            neurons: num(field(10), "neurons")?,
            samples: num(field(11), "samples")?,
            rate: num(field(12), "rate")?,
            e_ann_pj: num(field(13), "e_ann_pj")?,
            e_snn_pj: num(field(14), "e_snn_pj")?,
        })
    }
}

pub fn write_metrics_to<W: Write>(rows: &[MetricsRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for row in rows {
        w.write_record(row.record())?;
    }
    w.flush()?;
    Ok(())
}

/// Header plus one line per row; floats carry six fractional digits.
pub fn write_metrics_csv(rows: &[MetricsRow], path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    write_metrics_to(rows, std::io::BufWriter::new(file))
}

pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    let header = r.headers()?.clone();
    if header.iter().ne(METRICS_HEADER.iter().copied()) {
        return Err(Error::Data(
            "metrics header does not match the schema".into(),
        ));
    }
    r.records().map(|rec| MetricsRow::parse(&rec?)).collect()
}
