use std::fmt::Write as _;

use super::bdrate::{bd_rate, RdCurve, RdPoint};
use super::filter::{apply_filter, TileParams};
use super::metrics::{format_db, psnr};
use super::EvalError;
use crate::codec::{encode_frame, Frame, QuadtreeParams};
use crate::model::{ModelWeights, Variant};

/// One test image with its class label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub name: String,
    pub class: String,
    pub frame: Frame,
}

/// Trained models looked up by `(variant, qp_tag)`.
#[derive(Debug, Clone, Default)]
pub struct ModelBank {
    models: Vec<ModelWeights>,
}

impl ModelBank {
    pub fn new(models: Vec<ModelWeights>) -> Self {
        ModelBank { models }
    }

    pub fn insert(&mut self, m: ModelWeights) {
        let c = *m.config();
        self.models.retain(|x| !(x.config().variant == c.variant && x.config().qp_tag == c.qp_tag));
        self.models.push(m);
    }

    pub fn get(&self, variant: Variant, qp: u8) -> Result<&ModelWeights, EvalError> {
        self.models
            .iter()
            .find(|m| m.config().variant == variant && m.config().qp_tag == qp)
            .ok_or(EvalError::MissingModel { variant, qp })
    }
}

/// Raw measurement of one (sequence, qp): rate and PSNR before and after
/// each variant's filter.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPoint {
    pub sequence: String,
    pub qp: u8,
    pub rate: f64,
    pub psnr_recon: f64,
    /// Filtered PSNR per variant, in report column order.
    pub psnr_filtered: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub label: String,
    pub class: String,
    /// BD-rate vs the unfiltered anchor per variant (`None` when the curve
    /// is unusable).
    pub bd_rate: Vec<Option<f64>>,
    /// Mean PSNR gain over the finite qps per variant.
    pub delta_psnr: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub qps: Vec<u8>,
    pub variants: Vec<Variant>,
    pub rows: Vec<ReportRow>,
    pub class_rows: Vec<ReportRow>,
    pub average: ReportRow,
    /// Labels of the pairwise table: `ANCHOR` then the variants.
    pub pairwise_labels: Vec<String>,
    /// Mean over sequences of BD-rate(row as anchor, column as test).
    pub pairwise: Vec<Vec<Option<f64>>>,
    pub raw: Vec<RawPoint>,
    /// Points with infinite PSNR left out of the averages.
    pub inf_excluded: usize,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn curve(label: &str, pts: impl Iterator<Item = (f64, f64)>) -> RdCurve {
    RdCurve::new(label, pts.map(|(rate, psnr)| RdPoint { rate, psnr }).collect())
}

/// Encodes every sequence at every qp, filters with each variant's model
/// for that qp, and tabulates BD-rates and PSNR gains.
pub fn ablation_report(
    corpus: &[Sequence],
    bank: &ModelBank,
    variants: &[Variant],
    qps: &[u8],
    tiles: &TileParams,
    quadtree: &QuadtreeParams,
) -> Result<EvalReport, EvalError> {
    if corpus.is_empty() || qps.is_empty() {
        return Err(EvalError::Config("ablation needs at least one sequence and one qp".into()));
    }
    for &v in variants {
        for &q in qps {
            bank.get(v, q)?;
        }
    }
    let mut raw = Vec::new();
    for seq in corpus {
        for &qp in qps {
            let coded = encode_frame(&seq.frame, qp, false, quadtree)?;
            let mut filtered = Vec::with_capacity(variants.len());
            for &v in variants {
                let out = apply_filter(bank.get(v, qp)?, &coded, tiles)?;
                filtered.push(psnr(&seq.frame, &out)?);
            }
            raw.push(RawPoint {
                sequence: seq.name.clone(),
                qp,
                rate: coded.rate_proxy,
                psnr_recon: psnr(&seq.frame, &coded.reconstruction)?,
                psnr_filtered: filtered,
            });
        }
    }
    Ok(tabulate(corpus, variants, qps, raw))
}

/// Builds every table from raw measurements alone.
pub fn tabulate(corpus: &[Sequence], variants: &[Variant], qps: &[u8], raw: Vec<RawPoint>) -> EvalReport {
    let nv = variants.len();
    let mut inf_excluded = 0;
    let mut rows = Vec::new();
    // curves[s][0] = anchor, curves[s][1 + v] = variant v
    let mut curves: Vec<Vec<RdCurve>> = Vec::new();
    for seq in corpus {
        let pts: Vec<&RawPoint> = raw.iter().filter(|p| p.sequence == seq.name).collect();
        let mut cs = vec![curve("ANCHOR", pts.iter().map(|p| (p.rate, p.psnr_recon)))];
        for (i, v) in variants.iter().enumerate() {
            cs.push(curve(v.name(), pts.iter().map(|p| (p.rate, p.psnr_filtered[i]))));
        }
        let bd: Vec<Option<f64>> = (0..nv).map(|i| bd_rate(&cs[0], &cs[1 + i]).ok()).collect();
        let mut delta = Vec::with_capacity(nv);
        for i in 0..nv {
            let finite: Vec<f64> = pts
                .iter()
                .filter(|p| p.psnr_recon.is_finite() && p.psnr_filtered[i].is_finite())
                .map(|p| p.psnr_filtered[i] - p.psnr_recon)
                .collect();
            inf_excluded += pts.len() - finite.len();
            delta.push(mean(finite.into_iter()));
        }
        rows.push(ReportRow {
            label: seq.name.clone(),
            class: seq.class.clone(),
            bd_rate: bd,
            delta_psnr: delta,
        });
        curves.push(cs);
    }

    let summarize = |label: &str, class: &str, members: &[&ReportRow]| ReportRow {
        label: label.to_string(),
        class: class.to_string(),
        bd_rate: (0..nv).map(|i| mean(members.iter().filter_map(|r| r.bd_rate[i]))).collect(),
        delta_psnr: (0..nv).map(|i| mean(members.iter().filter_map(|r| r.delta_psnr[i]))).collect(),
    };
    let mut classes: Vec<&str> = corpus.iter().map(|s| s.class.as_str()).collect();
    classes.sort_unstable();
    classes.dedup();
    let class_rows = classes
        .iter()
        .map(|c| {
            let members: Vec<&ReportRow> = rows.iter().filter(|r| r.class == *c).collect();
            summarize(&format!("class {c}"), c, &members)
        })
        .collect();
    let all: Vec<&ReportRow> = rows.iter().collect();
    let average = summarize("average", "", &all);

    let labels: Vec<String> = std::iter::once("ANCHOR".to_string()).chain(variants.iter().map(|v| v.name().to_string())).collect();
    let pairwise = (0..=nv)
        .map(|a| {
            (0..=nv)
                .map(|t| {
                    if a == t {
                        return Some(0.0);
                    }
                    mean(curves.iter().filter_map(|cs| bd_rate(&cs[a], &cs[t]).ok()))
                })
                .collect()
        })
        .collect();

    EvalReport {
        qps: qps.to_vec(),
        variants: variants.to_vec(),
        rows,
        class_rows,
        average,
        pairwise_labels: labels,
        pairwise,
        raw,
        inf_excluded,
    }
}

fn cell(v: Option<f64>, decimals: usize) -> String {
    match v {
        Some(x) if x.is_infinite() => "inf".into(),
        Some(x) => format!("{x:.decimals$}"),
        None => "n/a".into(),
    }
}

impl EvalReport {
    /// Mean PSNR gain of `variant` over all sequences.
    pub fn mean_gain(&self, variant: Variant) -> Option<f64> {
        let i = self.variants.iter().position(|&v| v == variant)?;
        self.average.delta_psnr[i]
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec!["sequence".to_string(), "class".to_string()];
        h.extend(self.variants.iter().map(|v| format!("{v} bd_rate_%")));
        h.extend(self.variants.iter().map(|v| format!("{v} dpsnr_db")));
        h
    }

    fn table(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .chain(&self.class_rows)
            .chain(std::iter::once(&self.average))
            .map(|r| {
                let mut line = vec![r.label.clone(), r.class.clone()];
                line.extend(r.bd_rate.iter().map(|&v| cell(v, 2)));
                line.extend(r.delta_psnr.iter().map(|&v| cell(v, 4)));
                line
            })
            .collect()
    }

    /// Main table: one row per sequence, per class, and the average.
    pub fn to_csv(&self) -> String {
        let mut s = self.header().join(",") + "\n";
        for line in self.table() {
            s += &line.join(",");
            s.push('\n');
        }
        s
    }

    pub fn raw_csv(&self) -> String {
        let mut s = String::from("sequence,qp,rate,psnr_recon");
        for v in &self.variants {
            let _ = write!(s, ",psnr_{v}");
        }
        s.push('\n');
        for p in &self.raw {
            let _ = write!(s, "{},{},{},{}", p.sequence, p.qp, p.rate, format_db(p.psnr_recon));
            for &f in &p.psnr_filtered {
                let _ = write!(s, ",{}", format_db(f));
            }
            s.push('\n');
        }
        s
    }

    pub fn pairwise_csv(&self) -> String {
        let mut s = format!("anchor\\test,{}\n", self.pairwise_labels.join(","));
        for (label, row) in self.pairwise_labels.iter().zip(&self.pairwise) {
            s += label;
            for &v in row {
                s.push(',');
                s += &cell(v, 2);
            }
            s.push('\n');
        }
        s
    }

    /// Human-readable rendering of every table with aligned columns.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "BD-rate vs unfiltered anchor (%) and mean PSNR gain (dB), qps {:?}", self.qps);
        out += &align(&self.header(), &self.table());
        out.push('\n');
        let _ = writeln!(out, "Mean pairwise BD-rate (%), row = anchor, column = test");
        let header: Vec<String> = std::iter::once(String::new()).chain(self.pairwise_labels.iter().cloned()).collect();
        let body: Vec<Vec<String>> = self
            .pairwise_labels
            .iter()
            .zip(&self.pairwise)
            .map(|(l, row)| std::iter::once(l.clone()).chain(row.iter().map(|&v| cell(v, 2))).collect())
            .collect();
        out += &align(&header, &body);
        if self.inf_excluded > 0 {
            let _ = writeln!(out, "\n* {} point(s) with infinite PSNR excluded from averages", self.inf_excluded);
        }
        out
    }
}

fn align(header: &[String], rows: &[Vec<String>]) -> String {
    let widths: Vec<usize> = (0..header.len())
        .map(|i| rows.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap_or(0))
        .collect();
    let fmt_row = |r: &[String]| {
        r.iter()
            .enumerate()
            .map(|(i, c)| if i == 0 { format!("{c:<w$}", w = widths[i]) } else { format!("{c:>w$}", w = widths[i]) })
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut s = fmt_row(header) + "\n";
    for r in rows {
        s += &fmt_row(r);
        s.push('\n');
    }
    s
}

/// Mean PSNR gains of every per-qp model on data coded at every qp.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossQpMatrix {
    pub qps: Vec<u8>,
    /// `gains[m][q]`: model for `qps[m]` on data coded at `qps[q]`.
    pub gains: Vec<Vec<f64>>,
}

impl CrossQpMatrix {
    /// `gains[m][q] - gains[q][q]`; the diagonal is zero by construction.
    pub fn delta(&self, m: usize, q: usize) -> f64 {
        self.gains[m][q] - self.gains[q][q]
    }

    pub fn deltas(&self) -> Vec<Vec<f64>> {
        (0..self.qps.len()).map(|m| (0..self.qps.len()).map(|q| self.delta(m, q)).collect()).collect()
    }

    /// Mean `|delta|` over all off-diagonal pairs whose qps differ by `dqp`.
    pub fn mean_abs_at(&self, dqp: u8) -> Option<f64> {
        let n = self.qps.len();
        mean(
            (0..n)
                .flat_map(|m| (0..n).map(move |q| (m, q)))
                .filter(|&(m, q)| m != q && self.qps[m].abs_diff(self.qps[q]) == dqp)
                .map(|(m, q)| self.delta(m, q).abs()),
        )
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("model_qp\\data_qp");
        for q in &self.qps {
            let _ = write!(s, ",{q}");
        }
        s.push('\n');
        for (m, row) in self.deltas().iter().enumerate() {
            let _ = write!(s, "{}", self.qps[m]);
            for v in row {
                let _ = write!(s, ",{v:.4}");
            }
            s.push('\n');
        }
        s
    }
}

/// Filters each corpus frame coded at each qp with every qp's model.
pub fn cross_qp_matrix(
    bank: &ModelBank,
    variant: Variant,
    corpus: &[Frame],
    qps: &[u8],
    tiles: &TileParams,
    quadtree: &QuadtreeParams,
) -> Result<CrossQpMatrix, EvalError> {
    if corpus.is_empty() {
        return Err(EvalError::Config("cross-qp matrix needs at least one frame".into()));
    }
    let models: Vec<&ModelWeights> = qps.iter().map(|&q| bank.get(variant, q)).collect::<Result<_, _>>()?;
    let n = qps.len();
    let mut gains = vec![vec![0.0; n]; n];
    for frame in corpus {
        for (qi, &qp) in qps.iter().enumerate() {
            let coded = encode_frame(frame, qp, false, quadtree)?;
            let base = psnr(frame, &coded.reconstruction)?;
            for (mi, m) in models.iter().enumerate() {
                let out = apply_filter(m, &coded, tiles)?;
                gains[mi][qi] += (psnr(frame, &out)? - base) / corpus.len() as f64;
            }
        }
    }
    Ok(CrossQpMatrix { qps: qps.to_vec(), gains })
}
