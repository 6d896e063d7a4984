//! Manual labels and inter-rater agreement.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Category used for an unlabeled item. Shared empties count as agreement.
pub const EMPTY: &str = "Empty";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportVersion {
    Raw,
    Improved,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Validity {
    Valid,
    Invalid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reproduction {
    Reproducible(Validity),
    Irreproducible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonExecutableReason {
    AmbiguousInfo,
    MissingInfo,
    WrongInfo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum S2rLabel {
    Executable(Reproduction),
    NonExecutable(NonExecutableReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sufficiency {
    Sufficient,
    Insufficient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObLabel {
    NotPresent,
    Present(Sufficiency),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Accuracy {
    Accurate,
    Inaccurate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EbLabel {
    NotPresent,
    Present(Accuracy),
}

impl S2rLabel {
    pub const CATEGORIES: [&'static str; 6] = [
        "Executable/Reproducible/Valid",
        "Executable/Reproducible/Invalid",
        "Executable/Irreproducible",
        "NonExecutable/AmbiguousInfo",
        "NonExecutable/MissingInfo",
        "NonExecutable/WrongInfo",
    ];

    /// Leaf path in the label hierarchy.
    pub fn category(self) -> &'static str {
        use NonExecutableReason::*;
        match self {
            S2rLabel::Executable(Reproduction::Reproducible(Validity::Valid)) => {
                Self::CATEGORIES[0]
            }
            S2rLabel::Executable(Reproduction::Reproducible(Validity::Invalid)) => {
                Self::CATEGORIES[1]
            }
            S2rLabel::Executable(Reproduction::Irreproducible) => Self::CATEGORIES[2],
            S2rLabel::NonExecutable(AmbiguousInfo) => Self::CATEGORIES[3],
            S2rLabel::NonExecutable(MissingInfo) => Self::CATEGORIES[4],
            S2rLabel::NonExecutable(WrongInfo) => Self::CATEGORIES[5],
        }
    }

    pub fn is_executable(self) -> bool {
        matches!(self, S2rLabel::Executable(_))
    }
}

impl ObLabel {
    pub const CATEGORIES: [&'static str; 3] =
        ["NotPresent", "Present/Sufficient", "Present/Insufficient"];

    pub fn category(self) -> &'static str {
        match self {
            ObLabel::NotPresent => Self::CATEGORIES[0],
            ObLabel::Present(Sufficiency::Sufficient) => Self::CATEGORIES[1],
            ObLabel::Present(Sufficiency::Insufficient) => Self::CATEGORIES[2],
        }
    }
}

impl EbLabel {
    pub const CATEGORIES: [&'static str; 3] =
        ["NotPresent", "Present/Accurate", "Present/Inaccurate"];

    pub fn category(self) -> &'static str {
        match self {
            EbLabel::NotPresent => Self::CATEGORIES[0],
            EbLabel::Present(Accuracy::Accurate) => Self::CATEGORIES[1],
            EbLabel::Present(Accuracy::Inaccurate) => Self::CATEGORIES[2],
        }
    }
}

/// One annotator's judgement of one report version.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManualLabel {
    pub key: String,
    pub version: ReportVersion,
    #[serde(default)]
    pub s2r_label: Option<S2rLabel>,
    #[serde(default)]
    pub ob_label: Option<ObLabel>,
    #[serde(default)]
    pub eb_label: Option<EbLabel>,
    pub annotator: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LabelType {
    S2R,
    OB,
    EB,
}

impl LabelType {
    pub const ALL: [LabelType; 3] = [LabelType::S2R, LabelType::OB, LabelType::EB];

    /// Leaf categories followed by [`EMPTY`].
    pub fn categories(self) -> Vec<&'static str> {
        let leaves: &[&'static str] = match self {
            LabelType::S2R => &S2rLabel::CATEGORIES,
            LabelType::OB => &ObLabel::CATEGORIES,
            LabelType::EB => &EbLabel::CATEGORIES,
        };
        leaves.iter().copied().chain([EMPTY]).collect()
    }

    pub fn category_of(self, label: &ManualLabel) -> Option<&'static str> {
        match self {
            LabelType::S2R => label.s2r_label.map(S2rLabel::category),
            LabelType::OB => label.ob_label.map(ObLabel::category),
            LabelType::EB => label.eb_label.map(EbLabel::category),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaResult {
    pub label_type: Option<LabelType>,
    pub kappa: f64,
    pub observed_agreement: f64,
    pub expected_agreement: f64,
    pub categories: Vec<String>,
    /// Rows are the first rater, columns the second.
    pub confusion: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum KappaError {
    #[error("label lists differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("no items to compare")]
    Empty,
    #[error("label {0:?} is not in the category set")]
    UnknownCategory(String),
    #[error("{key} ({version:?}) has {count} annotations, expected two from distinct annotators")]
    UnpairedAnnotation {
        key: String,
        version: ReportVersion,
        count: usize,
    },
}

/// Kappa from a square confusion matrix. Perfect observed agreement gives 1.
pub fn kappa_from_confusion(confusion: &[Vec<u64>]) -> (f64, f64, f64) {
    let total: u64 = confusion.iter().flatten().sum();
    if total == 0 {
        return (0.0, 0.0, 0.0);
    }
    let n = total as f64;
    let k = confusion.len();
    let trace: u64 = (0..k).map(|i| confusion[i][i]).sum();
    let p_o = trace as f64 / n;
    let p_e: f64 = (0..k)
        .map(|i| {
            let row: u64 = confusion[i].iter().sum();
            let col: u64 = confusion.iter().map(|r| r[i]).sum();
            (row as f64 / n) * (col as f64 / n)
        })
        .sum();
    let kappa = if trace == total {
        1.0
    } else {
        (p_o - p_e) / (1.0 - p_e)
    };
    (kappa, p_o, p_e)
}

/// Kappa over a fixed category list; `None` labels map to [`EMPTY`], which
/// is appended to `categories` when missing.
pub fn cohens_kappa_over(
    categories: &[&str],
    a: &[Option<&str>],
    b: &[Option<&str>],
) -> Result<KappaResult, KappaError> {
    if a.len() != b.len() {
        return Err(KappaError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(KappaError::Empty);
    }
    let mut cats: Vec<String> = categories.iter().map(|c| c.to_string()).collect();
    if !cats.iter().any(|c| c == EMPTY) {
        cats.push(EMPTY.to_string());
    }
    let index: BTreeMap<&str, usize> = cats
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let lookup = |l: &Option<&str>| {
        let name = l.unwrap_or(EMPTY);
        index
            .get(name)
            .copied()
            .ok_or_else(|| KappaError::UnknownCategory(name.to_string()))
    };
    let mut confusion = vec![vec![0u64; cats.len()]; cats.len()];
    for (x, y) in a.iter().zip(b) {
        confusion[lookup(x)?][lookup(y)?] += 1;
    }
    let (kappa, observed_agreement, expected_agreement) = kappa_from_confusion(&confusion);
    Ok(KappaResult {
        label_type: None,
        kappa,
        observed_agreement,
        expected_agreement,
        categories: cats,
        confusion,
    })
}

/// Kappa over the categories that occur in either list, sorted, plus [`EMPTY`].
pub fn cohens_kappa(a: &[Option<&str>], b: &[Option<&str>]) -> Result<KappaResult, KappaError> {
    let mut seen: Vec<&str> = a
        .iter()
        .chain(b)
        .flatten()
        .copied()
        .filter(|c| *c != EMPTY)
        .collect();
    seen.sort_unstable();
    seen.dedup();
    cohens_kappa_over(&seen, a, b)
}

/// Agreement per label type between the two annotators of every
/// (key, version). The lexicographically first annotator is the row rater.
pub fn kappa_study(annotations: &[ManualLabel]) -> Result<Vec<KappaResult>, KappaError> {
    let mut groups: BTreeMap<(&str, ReportVersion), Vec<&ManualLabel>> = BTreeMap::new();
    for label in annotations {
        groups
            .entry((label.key.as_str(), label.version))
            .or_default()
            .push(label);
    }
    let mut pairs = Vec::with_capacity(groups.len());
    for ((key, version), mut group) in groups {
        group.sort_by(|x, y| x.annotator.cmp(&y.annotator));
        if group.len() != 2 || group[0].annotator == group[1].annotator {
            return Err(KappaError::UnpairedAnnotation {
                key: key.to_string(),
                version,
                count: group.len(),
            });
        }
        pairs.push((group[0], group[1]));
    }
    LabelType::ALL
        .into_iter()
        .map(|lt| {
            let a: Vec<Option<&str>> = pairs.iter().map(|(x, _)| lt.category_of(x)).collect();
            let b: Vec<Option<&str>> = pairs.iter().map(|(_, y)| lt.category_of(y)).collect();
            let mut r = cohens_kappa_over(&lt.categories(), &a, &b)?;
            r.label_type = Some(lt);
            Ok(r)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Expand a confusion matrix into two label lists over categories "c0".."cN".
    fn lists_from(confusion: &[Vec<u64>]) -> (Vec<String>, Vec<String>) {
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for (i, row) in confusion.iter().enumerate() {
            for (j, &count) in row.iter().enumerate() {
                for _ in 0..count {
                    a.push(format!("c{i}"));
                    b.push(format!("c{j}"));
                }
            }
        }
        (a, b)
    }

    fn as_opts(v: &[String]) -> Vec<Option<&str>> {
        v.iter().map(|s| Some(s.as_str())).collect()
    }

    // [[20, 5], [10, 15]]: n = 50, p_o = 35/50 = 0.70.
    // Row marginals 25/50, 25/50; column marginals 30/50, 20/50.
    // p_e = 0.5 * 0.6 + 0.5 * 0.4 = 0.50, so kappa = 0.20 / 0.50 = 0.4.
    #[test]
    fn two_by_two_hand_case() {
        let (a, b) = lists_from(&[vec![20, 5], vec![10, 15]]);
        let r = cohens_kappa(&as_opts(&a), &as_opts(&b)).unwrap();
        assert!((r.observed_agreement - 0.70).abs() < 1e-12);
        assert!((r.expected_agreement - 0.50).abs() < 1e-12);
        assert!((r.kappa - 0.4).abs() < 1e-12);
        assert_eq!(r.categories, ["c0", "c1", EMPTY]);
    }

    // Marginals (0.55, 0.45) on both sides give p_e = 0.505:
    // [[20, 7.5], [7.5, 15]] scaled by two is [[40, 15], [15, 30]], p_o = 0.70.
    #[test]
    fn symmetric_marginals_hand_case() {
        let (a, b) = lists_from(&[vec![40, 15], vec![15, 30]]);
        let r = cohens_kappa(&as_opts(&a), &as_opts(&b)).unwrap();
        assert!((r.expected_agreement - 0.505).abs() < 1e-12);
        assert!((r.kappa - 0.195 / 0.495).abs() < 1e-12);
        assert_eq!(format!("{:.4}", r.kappa), "0.3939");
    }

    #[test]
    fn shared_empties_are_agreement() {
        let a = [Some("x"), None, Some("y"), None];
        let r = cohens_kappa(&a, &a).unwrap();
        assert_eq!(r.kappa, 1.0);
        assert_eq!(r.confusion[2][2], 2);
    }

    #[test]
    fn independence_gives_zero() {
        // Row marginals (0.5, 0.5), column marginals (0.5, 0.5), cells all 0.25.
        let (a, b) = lists_from(&[vec![5, 5], vec![5, 5]]);
        assert_eq!(cohens_kappa(&as_opts(&a), &as_opts(&b)).unwrap().kappa, 0.0);
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        assert_eq!(
            cohens_kappa(&[Some("a")], &[]),
            Err(KappaError::LengthMismatch(1, 0))
        );
        assert_eq!(cohens_kappa(&[], &[]), Err(KappaError::Empty));
        assert_eq!(
            cohens_kappa_over(&["a"], &[Some("b")], &[Some("a")]),
            Err(KappaError::UnknownCategory("b".into()))
        );
    }

    fn label(
        key: &str,
        annotator: &str,
        s2r: Option<S2rLabel>,
        ob: Option<ObLabel>,
    ) -> ManualLabel {
        ManualLabel {
            key: key.into(),
            version: ReportVersion::Raw,
            s2r_label: s2r,
            ob_label: ob,
            eb_label: None,
            annotator: annotator.into(),
        }
    }

    #[test]
    fn identical_annotators_agree_fully() {
        let exec = Some(S2rLabel::Executable(Reproduction::Reproducible(
            Validity::Valid,
        )));
        let mut labels = Vec::new();
        for k in ["MC-1", "MC-2", "MC-3"] {
            labels.push(label(k, "ann1", exec, Some(ObLabel::NotPresent)));
            labels.push(label(k, "ann2", exec, Some(ObLabel::NotPresent)));
        }
        let rs = kappa_study(&labels).unwrap();
        assert_eq!(rs.len(), 3);
        assert!(rs
            .iter()
            .all(|r| r.kappa == 1.0 && r.observed_agreement == 1.0));
        assert_eq!(rs[0].categories.len(), 7);
        assert_eq!(rs[2].confusion[3][3], 3, "EB all empty");
    }

    #[test]
    fn study_matches_constructed_confusion() {
        let valid = Some(S2rLabel::Executable(Reproduction::Reproducible(
            Validity::Valid,
        )));
        let missing = Some(S2rLabel::NonExecutable(NonExecutableReason::MissingInfo));
        // Target S2R confusion over (valid, missing): [[20, 5], [10, 15]].
        let mut labels = Vec::new();
        let cells = [
            (valid, valid, 20),
            (valid, missing, 5),
            (missing, valid, 10),
            (missing, missing, 15),
        ];
        let mut n = 0;
        for (x, y, count) in cells {
            for _ in 0..count {
                let key = format!("MC-{n}");
                labels.push(label(&key, "b", y, None));
                labels.push(label(&key, "a", x, None));
                n += 1;
            }
        }
        let s2r = &kappa_study(&labels).unwrap()[0];
        assert_eq!(s2r.label_type, Some(LabelType::S2R));
        assert!((s2r.kappa - 0.4).abs() < 1e-12);
        assert_eq!(s2r.confusion[0][4], 5);
        assert_eq!(s2r.confusion[4][0], 10);
    }

    #[test]
    fn unpaired_annotations_are_rejected() {
        let labels = [label("MC-1", "a", None, None)];
        assert!(matches!(
            kappa_study(&labels),
            Err(KappaError::UnpairedAnnotation { count: 1, .. })
        ));
        let same = [
            label("MC-1", "a", None, None),
            label("MC-1", "a", None, None),
        ];
        assert!(matches!(
            kappa_study(&same),
            Err(KappaError::UnpairedAnnotation { count: 2, .. })
        ));
    }

    #[test]
    fn labels_serialize_along_the_hierarchy() {
        let l = label(
            "MC-1",
            "a",
            Some(S2rLabel::Executable(Reproduction::Irreproducible)),
            Some(ObLabel::Present(Sufficiency::Insufficient)),
        );
        let json = serde_json::to_value(&l).unwrap();
        assert_eq!(
            json["s2r_label"],
            serde_json::json!({"executable": "irreproducible"})
        );
        assert_eq!(
            json["ob_label"],
            serde_json::json!({"present": "insufficient"})
        );
        assert_eq!(serde_json::from_value::<ManualLabel>(json).unwrap(), l);
        let bad = serde_json::json!({"key": "k", "version": "raw", "annotator": "a", "ob_label": {"present": "accurate"}});
        assert!(serde_json::from_value::<ManualLabel>(bad).is_err());
    }

    proptest! {
        #[test]
        fn kappa_matches_closed_form(cells in prop::collection::vec(0u64..20, 9)) {
            let confusion: Vec<Vec<u64>> = cells.chunks(3).map(<[u64]>::to_vec).collect();
            prop_assume!(cells.iter().sum::<u64>() > 0);
            let (a, b) = lists_from(&confusion);
            let r = cohens_kappa_over(&["c0", "c1", "c2"], &as_opts(&a), &as_opts(&b)).unwrap();
            let n = cells.iter().sum::<u64>() as f64;
            let po = (confusion[0][0] + confusion[1][1] + confusion[2][2]) as f64 / n;
            let pe: f64 = (0..3)
                .map(|i| confusion[i].iter().sum::<u64>() as f64 * (0..3).map(|r| confusion[r][i]).sum::<u64>() as f64)
                .sum::<f64>() / (n * n);
            let expected = if po == 1.0 { 1.0 } else { (po - pe) / (1.0 - pe) };
            prop_assert!((r.kappa - expected).abs() < 1e-12);
            prop_assert!(r.kappa <= 1.0);
            let trace: u64 = (0..r.confusion.len()).map(|i| r.confusion[i][i]).sum();
            prop_assert_eq!(r.observed_agreement, trace as f64 / n);
            prop_assert_eq!(cohens_kappa(&as_opts(&a), &as_opts(&a)).unwrap().kappa, 1.0);
        }
    }
}
