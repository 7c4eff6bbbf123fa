//! Scored detections with their predicted log-variances, and the text file
//! format they are exchanged in.
//!
//! One detection per line:
//! `Car cx cy cz l w h yaw score s_r[6] s_v[10] s_o[2]`.

use std::fs;
use std::path::Path;

use crate::boxgeom::{Box3D, ScoredBox};
use crate::codec::{LOC_DIM, ORIENT_DIM, RPN_DIM};
use crate::error::{Error, Result};
use crate::uncstats::total_variance;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: Box3D,
    pub score: f64,
    pub rpn_log_var: [f64; RPN_DIM],
    pub loc_log_var: [f64; LOC_DIM],
    pub orient_log_var: [f64; ORIENT_DIM],
}

impl Detection {
    pub fn scored(&self) -> ScoredBox {
        ScoredBox {
            bbox: self.bbox,
            score: self.score,
        }
    }

    pub fn rpn_tv(&self) -> f64 {
        total_variance(&self.rpn_log_var)
    }

    pub fn loc_tv(&self) -> f64 {
        total_variance(&self.loc_log_var)
    }

    pub fn orient_tv(&self) -> f64 {
        total_variance(&self.orient_log_var)
    }
}

const FIELDS: usize = 1 + 8 + RPN_DIM + LOC_DIM + ORIENT_DIM;

pub fn format_detections(dets: &[Detection]) -> String {
    let mut s = String::from("# class cx cy cz l w h yaw score rpn_log_var[6] loc_log_var[10] orient_log_var[2]\n");
    for d in dets {
        let b = &d.bbox;
        let mut fields: Vec<String> = vec!["Car".into()];
        fields.extend(
            [b.cx, b.cy, b.cz, b.l, b.w, b.h, b.yaw, d.score]
                .iter()
                .chain(&d.rpn_log_var)
                .chain(&d.loc_log_var)
                .chain(&d.orient_log_var)
                .map(|v| format!("{v}")),
        );
        s.push_str(&fields.join(" "));
        s.push('\n');
    }
    s
}

pub fn parse_detections(text: &str) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != FIELDS {
            return Err(Error::format(
                Some(i + 1),
                format!("expected {FIELDS} fields, found {}", toks.len()),
            ));
        }
        let v: Vec<f64> = toks[1..]
            .iter()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::format(Some(i + 1), format!("bad number `{t}`")))
            })
            .collect::<Result<_>>()?;
        let mut d = Detection {
            bbox: Box3D::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6]),
            score: v[7],
            rpn_log_var: [0.0; RPN_DIM],
            loc_log_var: [0.0; LOC_DIM],
            orient_log_var: [0.0; ORIENT_DIM],
        };
        d.rpn_log_var.copy_from_slice(&v[8..8 + RPN_DIM]);
        d.loc_log_var
            .copy_from_slice(&v[8 + RPN_DIM..8 + RPN_DIM + LOC_DIM]);
        d.orient_log_var
            .copy_from_slice(&v[8 + RPN_DIM + LOC_DIM..]);
        out.push(d);
    }
    Ok(out)
}

pub fn save_detections(dets: &[Detection], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_detections(dets)).map_err(|e| Error::io(path, e))
}

pub fn load_detections(path: impl AsRef<Path>) -> Result<Vec<Detection>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_detections(&text)
}
