//! Per-image mean and variance of the raw Y, Cb and Cr channels.

use std::fmt::Write as _;

use serde::Serialize;
use ycda::autograd::Saliency;
use ycda::colorspace::{rgb_to_ycbcr_with, ColorStandard, ImageRgb};
use ycda::ica::compute_stats;

pub const CSV_HEADER: &str = "id,label,Y_mean,Cb_mean,Cr_mean,Y_var,Cb_var,Cr_var";
pub const CHANNELS: [&str; 3] = ["Y", "Cb", "Cr"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsRow {
    pub id: String,
    pub label: Option<Saliency>,
    pub mean: [f64; 3],
    pub var: [f64; 3],
}

impl StatsRow {
    pub fn of(id: impl Into<String>, label: Option<Saliency>, img: &ImageRgb) -> Self {
        Self::with_standard(id, label, img, ColorStandard::Bt601Full)
    }

    pub fn with_standard(
        id: impl Into<String>,
        label: Option<Saliency>,
        img: &ImageRgb,
        standard: ColorStandard,
    ) -> Self {
        let ycc = rgb_to_ycbcr_with(img, standard);
        let s = compute_stats(ycc.pixels()).expect("image tensors are rank 3");
        let arr = |d: &[f64]| [d[0], d[1], d[2]];
        Self {
            id: id.into(),
            label,
            mean: arr(s.mean.data()),
            var: arr(s.variance.data()),
        }
    }

    fn csv_line(&self, out: &mut String) {
        let label = self.label.map_or("", Saliency::as_str);
        write!(out, "{},{label}", self.id).unwrap();
        for v in self.mean.iter().chain(&self.var) {
            write!(out, ",{v:.9e}").unwrap();
        }
        out.push('\n');
    }
}

/// Average of the rows carrying `label`.
pub fn group_mean(rows: &[StatsRow], label: Saliency) -> Option<StatsRow> {
    let members: Vec<&StatsRow> = rows.iter().filter(|r| r.label == Some(label)).collect();
    if members.is_empty() {
        return None;
    }
    let n = members.len() as f64;
    let mut mean = [0.0; 3];
    let mut var = [0.0; 3];
    for r in &members {
        for c in 0..3 {
            mean[c] += r.mean[c] / n;
            var[c] += r.var[c] / n;
        }
    }
    Some(StatsRow {
        id: format!("mean_{}", label.as_str()),
        label: Some(label),
        mean,
        var,
    })
}

/// Rows in input order, followed by one group-mean row per label present.
pub fn to_csv(rows: &[StatsRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        r.csv_line(&mut out);
    }
    for label in [Saliency::Salient, Saliency::Camouflaged] {
        if let Some(g) = group_mean(rows, label) {
            g.csv_line(&mut out);
        }
    }
    out
}

/// How channel statistics move from a salient image to its camouflaged twin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairContrast {
    /// `|mean_salient - mean_camouflaged|` per channel.
    pub gap_diff: [f64; 3],
    /// `(var_salient - var_camouflaged) / var_salient` per channel.
    pub var_drop: [f64; 3],
}

pub fn pair_contrast(salient: &StatsRow, camouflaged: &StatsRow) -> PairContrast {
    let mut gap_diff = [0.0; 3];
    let mut var_drop = [0.0; 3];
    for c in 0..3 {
        gap_diff[c] = (salient.mean[c] - camouflaged.mean[c]).abs();
        var_drop[c] = (salient.var[c] - camouflaged.var[c]) / salient.var[c];
    }
    PairContrast { gap_diff, var_drop }
}

impl PairContrast {
    /// GAP within 0.01, luminance variance within 10%, both chroma variances at least halved.
    pub fn shows_pattern(&self) -> bool {
        self.gap_diff.iter().all(|&d| d < 0.01)
            && self.var_drop[0].abs() < 0.1
            && self.var_drop[1] >= 0.5
            && self.var_drop[2] >= 0.5
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ycda::Tensor;

    fn solid(r: f64, g: f64, b: f64) -> ImageRgb {
        let mut t = Tensor::zeros(&[3, 4, 4]).unwrap();
        for (c, v) in [r, g, b].into_iter().enumerate() {
            t.channel_mut(c).fill(v);
        }
        ImageRgb::new(t).unwrap()
    }

    #[test]
    fn solid_color_has_zero_variance() {
        let row = StatsRow::of("a", None, &solid(0.2, 0.7, 0.4));
        assert_eq!(row.var, [0.0; 3]);
        assert!((row.mean[0] - (0.299 * 0.2 + 0.587 * 0.7 + 0.114 * 0.4)).abs() < 1e-12);
    }

    #[test]
    fn csv_layout() {
        let rows = vec![
            StatsRow::of("a", Some(Saliency::Salient), &solid(1.0, 1.0, 1.0)),
            StatsRow::of("b", None, &solid(0.0, 0.0, 0.0)),
        ];
        let csv = to_csv(&rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("a,salient,1.000000000e0,5.000000000e-1,"));
        assert!(lines[2].starts_with("b,,0.000000000e0,"));
        assert!(lines[3].starts_with("mean_salient,salient,"));
        assert!(lines.iter().all(|l| l.split(',').count() == 8));
    }

    #[test]
    fn group_mean_averages() {
        let rows = vec![
            StatsRow::of("a", Some(Saliency::Camouflaged), &solid(1.0, 1.0, 1.0)),
            StatsRow::of("b", Some(Saliency::Camouflaged), &solid(0.0, 0.0, 0.0)),
        ];
        let g = group_mean(&rows, Saliency::Camouflaged).unwrap();
        assert!((g.mean[0] - 0.5).abs() < 1e-12);
        assert!(group_mean(&rows, Saliency::Salient).is_none());
    }
}
