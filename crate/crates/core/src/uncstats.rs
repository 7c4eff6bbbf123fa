//! Uncertainty analysis: total variance, Pearson correlation, base-angle
//! offsets, binned means and per-difficulty histograms.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::boxgeom::angle_diff;
use crate::error::{Error, Result};
use crate::pcio::Difficulty;

/// Detections at or below this score are left out of the analyses.
pub const ANALYSIS_MIN_SCORE: f64 = 0.5;

/// Sum of variances `exp(s_i)` of a log-variance vector.
pub fn total_variance(log_vars: &[f64]) -> f64 {
    log_vars.iter().map(|s| s.exp()).sum()
}

/// Sample Pearson correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::DegenerateInput(format!(
            "need two equal-length series of at least 2 values, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::DegenerateInput("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Angular distance from `yaw` to the nearest of 0, 90, 180, 270 degrees.
pub fn base_angle_offset(yaw: f64) -> f64 {
    (0..4)
        .map(|k| angle_diff(yaw, k as f64 * FRAC_PI_2))
        .fold(f64::INFINITY, f64::min)
        .min(FRAC_PI_4)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyRecord {
    pub scene: String,
    pub det_id: usize,
    pub score: f64,
    pub distance: f64,
    pub yaw: f64,
    pub difficulty: Option<Difficulty>,
    pub rpn_tv: f64,
    pub frh_loc_tv: f64,
    pub frh_orient_tv: f64,
    pub sigma_label: Option<f64>,
}

impl UncertaintyRecord {
    pub fn frh_tv(&self) -> f64 {
        self.frh_loc_tv + self.frh_orient_tv
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinKey {
    Distance,
    Score,
    AngleOffset,
}

impl BinKey {
    pub fn value(self, r: &UncertaintyRecord) -> f64 {
        match self {
            BinKey::Distance => r.distance,
            BinKey::Score => r.score,
            BinKey::AngleOffset => base_angle_offset(r.yaw),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinStat {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean_rpn_tv: Option<f64>,
    pub mean_loc_tv: Option<f64>,
    pub mean_orient_tv: Option<f64>,
}

fn check_edges(edges: &[f64]) -> Result<()> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::BadEdges);
    }
    Ok(())
}

/// Index of the half-open bin `[e_i, e_{i+1})` holding `v`.
pub fn bin_index(edges: &[f64], v: f64) -> Option<usize> {
    if !(v >= edges[0] && v < edges[edges.len() - 1]) {
        return None;
    }
    Some(edges.partition_point(|&e| e <= v) - 1)
}

/// Mean TVs per half-open bin of `key`. Records outside the edges are skipped.
pub fn binned_means(records: &[UncertaintyRecord], key: BinKey, edges: &[f64]) -> Result<Vec<BinStat>> {
    check_edges(edges)?;
    let nb = edges.len() - 1;
    let mut sums = vec![[0.0f64; 3]; nb];
    let mut counts = vec![0usize; nb];
    for r in records {
        if let Some(b) = bin_index(edges, key.value(r)) {
            counts[b] += 1;
            sums[b][0] += r.rpn_tv;
            sums[b][1] += r.frh_loc_tv;
            sums[b][2] += r.frh_orient_tv;
        }
    }
    Ok((0..nb)
        .map(|b| {
            let mean = |k: usize| (counts[b] > 0).then(|| sums[b][k] / counts[b] as f64);
            BinStat {
                lo: edges[b],
                hi: edges[b + 1],
                count: counts[b],
                mean_rpn_tv: mean(0),
                mean_loc_tv: mean(1),
                mean_orient_tv: mean(2),
            }
        })
        .collect())
}

/// Log-spaced TV histogram edges: `1e-4 .. 1e2`, four bins per decade.
pub fn tv_histogram_edges() -> Vec<f64> {
    (0..=24).map(|i| 10f64.powf(-4.0 + i as f64 / 4.0)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DifficultyHistogram {
    pub edges: Vec<f64>,
    pub counts: Vec<(Difficulty, Vec<usize>)>,
}

/// Histogram of FRH TV (location plus orientation) per difficulty. Values
/// beyond the outer edges are counted in the first or last bin; records
/// without a difficulty are skipped.
pub fn difficulty_histogram(records: &[UncertaintyRecord]) -> DifficultyHistogram {
    let edges = tv_histogram_edges();
    let nb = edges.len() - 1;
    let mut counts: Vec<(Difficulty, Vec<usize>)> =
        Difficulty::ALL.iter().map(|&d| (d, vec![0; nb])).collect();
    for r in records {
        let Some(d) = r.difficulty else { continue };
        let tv = r.frh_tv();
        let b = if tv < edges[0] {
            0
        } else {
            bin_index(&edges, tv).unwrap_or(nb - 1)
        };
        let slot = counts.iter_mut().find(|(k, _)| *k == d).unwrap();
        slot.1[b] += 1;
    }
    DifficultyHistogram { edges, counts }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Analysis {
    TvVsDistance,
    TvVsScore,
    TvVsAngle,
    DifficultyHist,
    RpnVsFrh,
    LocVsOrient,
}

impl std::str::FromStr for Analysis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "tv-vs-distance" => Analysis::TvVsDistance,
            "tv-vs-score" => Analysis::TvVsScore,
            "tv-vs-angle" => Analysis::TvVsAngle,
            "difficulty-hist" => Analysis::DifficultyHist,
            "rpn-vs-frh" => Analysis::RpnVsFrh,
            "loc-vs-orient" => Analysis::LocVsOrient,
            other => return Err(format!("unknown analysis `{other}`")),
        })
    }
}

pub fn default_edges(key: BinKey) -> Vec<f64> {
    match key {
        BinKey::Distance => (0..=7).map(|i| 10.0 * i as f64).collect(),
        // top edge nudged so a score of exactly 1 is counted
        BinKey::Score => vec![0.5, 0.6, 0.7, 0.8, 0.9, 1.0 + 1e-9],
        BinKey::AngleOffset => {
            let mut e: Vec<f64> = (0..=5).map(|i| FRAC_PI_4 * i as f64 / 5.0).collect();
            e[5] = FRAC_PI_4 + 1e-12;
            e
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn bins_csv(bins: &[BinStat]) -> String {
    let mut s = String::from("bin_lo,bin_hi,count,mean_rpn_tv,mean_frh_loc_tv,mean_frh_orient_tv\n");
    for b in bins {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            b.lo,
            b.hi,
            b.count,
            opt(b.mean_rpn_tv),
            opt(b.mean_loc_tv),
            opt(b.mean_orient_tv)
        );
    }
    s
}

fn pcc_csv(xs: &[f64], ys: &[f64]) -> String {
    let p = pearson(xs, ys).ok();
    format!("quantity,value\npearson,{}\ncount,{}\n", opt(p), xs.len())
}

/// Runs one analysis over the records with score above
/// [`ANALYSIS_MIN_SCORE`] and renders it as CSV.
pub fn run_analysis(records: &[UncertaintyRecord], analysis: Analysis) -> Result<String> {
    let kept: Vec<UncertaintyRecord> = records
        .iter()
        .filter(|r| r.score > ANALYSIS_MIN_SCORE)
        .cloned()
        .collect();
    let binned = |key| binned_means(&kept, key, &default_edges(key)).map(|b| bins_csv(&b));
    Ok(match analysis {
        Analysis::TvVsDistance => binned(BinKey::Distance)?,
        Analysis::TvVsScore => binned(BinKey::Score)?,
        Analysis::TvVsAngle => binned(BinKey::AngleOffset)?,
        Analysis::DifficultyHist => {
            let h = difficulty_histogram(&kept);
            let mut s = String::from("tv_lo,tv_hi,easy,moderate,hard\n");
            for b in 0..h.edges.len() - 1 {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{}",
                    h.edges[b], h.edges[b + 1], h.counts[0].1[b], h.counts[1].1[b], h.counts[2].1[b]
                );
            }
            s
        }
        Analysis::RpnVsFrh => {
            let xs: Vec<f64> = kept.iter().map(|r| r.rpn_tv).collect();
            let ys: Vec<f64> = kept.iter().map(|r| r.frh_tv()).collect();
            pcc_csv(&xs, &ys)
        }
        Analysis::LocVsOrient => {
            let xs: Vec<f64> = kept.iter().map(|r| r.frh_loc_tv).collect();
            let ys: Vec<f64> = kept.iter().map(|r| r.frh_orient_tv).collect();
            pcc_csv(&xs, &ys)
        }
    })
}

const RECORD_HEADER: &str =
    "scene,det_id,score,distance,yaw,difficulty,rpn_tv,frh_loc_tv,frh_orient_tv,sigma_label";

pub fn format_records(records: &[UncertaintyRecord]) -> String {
    let mut s = format!("{RECORD_HEADER}\n");
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.scene,
            r.det_id,
            r.score,
            r.distance,
            r.yaw,
            r.difficulty.map(|d| d.to_string()).unwrap_or_default(),
            r.rpn_tv,
            r.frh_loc_tv,
            r.frh_orient_tv,
            opt(r.sigma_label)
        );
    }
    s
}

pub fn parse_records(text: &str) -> Result<Vec<UncertaintyRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let lineno = Some(i + 1);
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(Error::format(lineno, "expected 10 columns"));
        }
        let num = |k: usize| {
            f[k].parse::<f64>()
                .map_err(|_| Error::format(lineno, format!("bad number `{}`", f[k])))
        };
        out.push(UncertaintyRecord {
            scene: f[0].to_string(),
            det_id: f[1]
                .parse()
                .map_err(|_| Error::format(lineno, "bad detection id"))?,
            score: num(2)?,
            distance: num(3)?,
            yaw: num(4)?,
            difficulty: if f[5].is_empty() {
                None
            } else {
                Some(f[5].parse().map_err(|e: String| Error::format(lineno, e))?)
            },
            rpn_tv: num(6)?,
            frh_loc_tv: num(7)?,
            frh_orient_tv: num(8)?,
            sigma_label: if f[9].is_empty() { None } else { Some(num(9)?) },
        });
    }
    Ok(out)
}

pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<UncertaintyRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_records(&text)
}

pub fn save_records(records: &[UncertaintyRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_records(records)).map_err(|e| Error::io(path, e))
}
