//! Detection metrics: one-vs-rest ROC over scored clips and TPR at an FPR
//! budget, the deployment gate for the failed-interruption class.
//!
//! Conventions: a clip counts as predicted-positive iff its positive-class
//! score is >= the threshold; thresholds run over distinct score values only,
//! so tied clips move together; the all-reject point (0,0) is always part of
//! the curve. "Within budget" means FPR <= budget, no interpolation, which
//! never overstates the achievable TPR.

use crate::model::ClassLabel;
use crate::{Error, Result};

pub const SCORES_HEADER: &str =
    "clip_id,true_label,s_backchannel,s_failed,s_interruption,s_laughter";

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredClip {
    pub clip_id: String,
    pub true_label: ClassLabel,
    pub scores: [f32; 4],
}

impl ScoredClip {
    #[must_use]
    pub fn score_for(&self, label: ClassLabel) -> f32 {
        self.scores[label.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Score cutoff that produces this point; the all-reject point carries
    /// `f64::INFINITY`.
    pub threshold: f64,
}

/// One-vs-rest ROC for `positive`. Points come out in threshold-descending
/// order starting at (0,0) and are monotone nondecreasing in both axes.
pub fn roc_curve(clips: &[ScoredClip], positive: ClassLabel) -> Result<Vec<RocPoint>> {
    let pos = clips.iter().filter(|c| c.true_label == positive).count();
    let neg = clips.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::MetricUndefined(format!(
            "need both classes for a ROC: {pos} positive and {neg} negative clips of {:?}",
            positive.as_str()
        )));
    }

    let mut ranked: Vec<(f64, bool)> = clips
        .iter()
        .map(|c| (f64::from(c.score_for(positive)), c.true_label == positive))
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < ranked.len() {
        let t = ranked[i].0;
        while i < ranked.len() && ranked[i].0 == t {
            if ranked[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold: t,
        });
    }
    Ok(points)
}

/// Highest TPR over thresholds whose FPR stays within `budget`. The
/// all-reject point always qualifies, so this is 0 rather than an error when
/// every real threshold overshoots.
pub fn tpr_at_fpr(clips: &[ScoredClip], positive: ClassLabel, budget: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&budget) {
        return Err(Error::InvalidArgument(format!(
            "fpr budget {budget} outside [0, 1]"
        )));
    }
    let curve = roc_curve(clips, positive)?;
    Ok(curve
        .iter()
        .filter(|p| p.fpr <= budget)
        .map(|p| p.tpr)
        .fold(0.0, f64::max))
}

/// Trapezoid area under a curve from [`roc_curve`].
#[must_use]
pub fn auc(curve: &[RocPoint]) -> f64 {
    curve
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
        .sum()
}

/// Parse the score CSV: exact header, then one clip per line.
pub fn parse_scores(text: &str) -> Result<Vec<ScoredClip>> {
    let kind = "scores";
    let fail = |line: usize, msg: String| Error::Parse {
        file_kind: kind,
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| fail(1, "empty file".into()))?;
    if header.trim_end() != SCORES_HEADER {
        return Err(fail(1, format!("header must be {SCORES_HEADER:?}")));
    }
    let mut out = Vec::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim_end();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(fail(line_no, format!("{} fields, expected 6", fields.len())));
        }
        let true_label = ClassLabel::parse(fields[1])
            .map_err(|e| fail(line_no, e.to_string()))?;
        let mut scores = [0.0f32; 4];
        for (slot, field) in scores.iter_mut().zip(&fields[2..]) {
            let v: f32 = field
                .trim()
                .parse()
                .map_err(|_| fail(line_no, format!("bad score {field:?}")))?;
            if !v.is_finite() {
                return Err(fail(line_no, format!("non-finite score {field:?}")));
            }
            *slot = v;
        }
        out.push(ScoredClip {
            clip_id: fields[0].to_string(),
            true_label,
            scores,
        });
    }
    Ok(out)
}

/// Inverse of [`parse_scores`]; used by the CLI to hand scores to `roc`.
#[must_use]
pub fn render_scores(clips: &[ScoredClip]) -> String {
    let mut s = String::from(SCORES_HEADER);
    s.push('\n');
    for c in clips {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            c.clip_id,
            c.true_label.as_str(),
            c.scores[0],
            c.scores[1],
            c.scores[2],
            c.scores[3]
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    fn clip(id: usize, label: ClassLabel, failed_score: f32) -> ScoredClip {
        let mut scores = [0.1f32; 4];
        scores[ClassLabel::FailedInterruption.index()] = failed_score;
        ScoredClip {
            clip_id: format!("c{id}"),
            true_label: label,
            scores,
        }
    }

    const POS: ClassLabel = ClassLabel::FailedInterruption;
    const NEG: ClassLabel = ClassLabel::Backchannel;

    #[test]
    fn perfect_separation_scores_one_at_any_budget() {
        let mut clips = Vec::new();
        for i in 0..10 {
            clips.push(clip(i, POS, 0.9 + 0.001 * i as f32));
        }
        for i in 0..100 {
            clips.push(clip(100 + i, NEG, 0.1 + 0.001 * i as f32));
        }
        assert_eq!(tpr_at_fpr(&clips, POS, 0.01).unwrap(), 1.0);
        assert_eq!(tpr_at_fpr(&clips, POS, 0.0).unwrap(), 1.0);
        let curve = roc_curve(&clips, POS).unwrap();
        assert!(curve.iter().any(|p| p.fpr == 0.0 && p.tpr == 1.0));
        assert!((auc(&curve) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn all_tied_scores_give_the_two_point_curve() {
        let mut clips = Vec::new();
        for i in 0..10 {
            clips.push(clip(i, POS, 0.5));
        }
        for i in 0..100 {
            clips.push(clip(100 + i, NEG, 0.5));
        }
        let curve = roc_curve(&clips, POS).unwrap();
        assert_eq!(curve.len(), 2);
        assert_eq!((curve[0].fpr, curve[0].tpr), (0.0, 0.0));
        assert_eq!((curve[1].fpr, curve[1].tpr), (1.0, 1.0));
        assert_eq!(tpr_at_fpr(&clips, POS, 0.01).unwrap(), 0.0);
    }

    #[test]
    fn one_percent_budget_admits_the_boundary_threshold() {
        // negatives at 0.00, 0.01, ..., 0.98; positives at 1.0
        let mut clips = Vec::new();
        for i in 0..99 {
            clips.push(clip(i, NEG, i as f32 * 0.01));
        }
        for i in 0..5 {
            clips.push(clip(200 + i, POS, 1.0));
        }
        assert_eq!(tpr_at_fpr(&clips, POS, 0.01).unwrap(), 1.0);
    }

    #[test]
    fn single_class_input_is_undefined() {
        let clips: Vec<ScoredClip> = (0..5).map(|i| clip(i, NEG, 0.2)).collect();
        assert!(matches!(
            roc_curve(&clips, POS),
            Err(Error::MetricUndefined(_))
        ));
        assert!(matches!(
            tpr_at_fpr(&[], POS, 0.01),
            Err(Error::MetricUndefined(_))
        ));
    }

    #[test]
    fn permuted_labels_sit_near_chance() {
        let mut rng = SplitMix64::new(99);
        let mut clips = Vec::new();
        for i in 0..1000 {
            let label = if rng.next_f64() < 0.3 { POS } else { NEG };
            clips.push(clip(i, label, rng.next_f64() as f32));
        }
        let curve = roc_curve(&clips, POS).unwrap();
        let area = auc(&curve);
        assert!((area - 0.5).abs() < 0.1, "auc {area}");
    }

    #[test]
    fn curve_is_monotone() {
        let mut rng = SplitMix64::new(5);
        let clips: Vec<ScoredClip> = (0..300)
            .map(|i| {
                let label = if rng.next_f64() < 0.5 { POS } else { NEG };
                // coarse grid forces plenty of ties
                let s = (rng.next_f64() * 10.0).floor() as f32 / 10.0;
                clip(i, label, s)
            })
            .collect();
        let curve = roc_curve(&clips, POS).unwrap();
        for w in curve.windows(2) {
            assert!(w[1].fpr >= w[0].fpr);
            assert!(w[1].tpr >= w[0].tpr);
            assert!(w[1].threshold < w[0].threshold);
        }
        assert_eq!(curve.last().unwrap().fpr, 1.0);
        assert_eq!(curve.last().unwrap().tpr, 1.0);
    }

    #[test]
    fn scores_round_trip_through_text() {
        let clips = vec![
            clip(0, POS, 0.75),
            clip(1, NEG, 0.25),
            clip(2, ClassLabel::Laughter, 0.1),
        ];
        let text = render_scores(&clips);
        assert!(text.starts_with(SCORES_HEADER));
        assert_eq!(parse_scores(&text).unwrap(), clips);
    }

    #[test]
    fn parser_reports_line_numbers() {
        let bad_header = "clip,stuff\n";
        assert!(matches!(
            parse_scores(bad_header),
            Err(Error::Parse { line: 1, .. })
        ));
        let bad_row = format!("{SCORES_HEADER}\nc0,backchannel,0.1,0.2,0.3,0.4\nc1,nope,0,0,0,0\n");
        assert!(matches!(
            parse_scores(&bad_row),
            Err(Error::Parse { line: 3, .. })
        ));
        let bad_score = format!("{SCORES_HEADER}\nc0,laughter,0.1,zzz,0.3,0.4\n");
        assert!(matches!(
            parse_scores(&bad_score),
            Err(Error::Parse { line: 2, .. })
        ));
        let short_row = format!("{SCORES_HEADER}\nc0,laughter,0.1\n");
        assert!(matches!(
            parse_scores(&short_row),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    proptest! {
        #[test]
        fn budget_monotone_and_full_budget_is_one(seed in 0u64..500) {
            let mut rng = SplitMix64::new(seed);
            let n = 20 + (rng.next_u64() % 80) as usize;
            let mut clips = Vec::new();
            for i in 0..n {
                let label = if rng.next_f64() < 0.4 { POS } else { NEG };
                clips.push(clip(i, label, (rng.next_f64() * 4.0).floor() as f32));
            }
            let has_both = clips.iter().any(|c| c.true_label == POS)
                && clips.iter().any(|c| c.true_label != POS);
            prop_assume!(has_both);
            let mut last = 0.0f64;
            for budget in [0.0, 0.01, 0.05, 0.2, 0.5, 1.0] {
                let t = tpr_at_fpr(&clips, POS, budget).unwrap();
                prop_assert!(t >= last);
                last = t;
            }
            prop_assert_eq!(tpr_at_fpr(&clips, POS, 1.0).unwrap(), 1.0);
        }

        #[test]
        fn strictly_increasing_transforms_leave_the_curve_alone(seed in 0u64..200) {
            let mut rng = SplitMix64::new(seed.wrapping_add(1_000));
            let mut clips = Vec::new();
            for i in 0..60 {
                let label = if rng.next_f64() < 0.5 { POS } else { NEG };
                clips.push(clip(i, label, (rng.next_f64() * 2.0 - 1.0) as f32));
            }
            let has_both = clips.iter().any(|c| c.true_label == POS)
                && clips.iter().any(|c| c.true_label != POS);
            prop_assume!(has_both);
            let base = roc_curve(&clips, POS).unwrap();
            // Rank map: strictly increasing on the observed score set and
            // immune to float rounding collisions.
            let mut distinct: Vec<f32> = clips.iter().map(|c| c.scores[POS.index()]).collect();
            distinct.sort_by(f32::total_cmp);
            distinct.dedup();
            let mut warped = clips.clone();
            for c in &mut warped {
                let s = c.scores[POS.index()];
                let rank = distinct.iter().position(|d| *d == s).unwrap();
                c.scores[POS.index()] = rank as f32 * 3.5 - 7.0;
            }
            let curve = roc_curve(&warped, POS).unwrap();
            prop_assert_eq!(base.len(), curve.len());
            for (a, b) in base.iter().zip(&curve) {
                prop_assert_eq!(a.fpr, b.fpr);
                prop_assert_eq!(a.tpr, b.tpr);
            }
        }
    }
}
