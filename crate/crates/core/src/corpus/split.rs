use rand::seq::SliceRandom;

use super::LabeledCorpus;
use crate::error::{Error, Result};
use crate::rng;

/// Document indices grouped by label, each group shuffled with `seed`.
fn shuffled_by_class(corpus: &LabeledCorpus, seed: u64) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); corpus.num_classes()];
    for (i, doc) in corpus.documents.iter().enumerate() {
        groups[doc.label].push(i);
    }
    let mut rng = rng::seeded(seed);
    for g in &mut groups {
        g.shuffle(&mut rng);
    }
    groups
}

/// Stratified train/test split. Each class contributes
/// `round(n_c * test_fraction)` documents to the test side; both sides keep
/// corpus order.
pub fn split_train_test(
    corpus: &LabeledCorpus,
    test_fraction: f64,
    seed: u64,
) -> Result<(LabeledCorpus, LabeledCorpus)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Parameter(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let mut test = Vec::new();
    for (class, group) in shuffled_by_class(corpus, seed).into_iter().enumerate() {
        if group.is_empty() {
            continue;
        }
        let n_test = (group.len() as f64 * test_fraction).round() as usize;
        if group.len() < 2 || n_test == 0 || n_test == group.len() {
            return Err(Error::Stratification(format!(
                "class {} ({} documents) cannot be split with test fraction {test_fraction}",
                corpus.class_names[class],
                group.len()
            )));
        }
        test.extend_from_slice(&group[..n_test]);
    }
    test.sort_unstable();
    let mut in_test = vec![false; corpus.len()];
    for &i in &test {
        in_test[i] = true;
    }
    let train: Vec<usize> = (0..corpus.len()).filter(|&i| !in_test[i]).collect();
    Ok((
        corpus.subset(&train, format!("{} | train seed={seed}", corpus.provenance)),
        corpus.subset(&test, format!("{} | test seed={seed}", corpus.provenance)),
    ))
}

/// Assigns every document to one of `folds` stratified folds. Returns the
/// document indices of each fold in corpus order.
pub fn stratified_folds(corpus: &LabeledCorpus, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::Parameter(format!("need at least 2 folds, got {folds}")));
    }
    let mut out = vec![Vec::new(); folds];
    for (class, group) in shuffled_by_class(corpus, seed).into_iter().enumerate() {
        if !group.is_empty() && group.len() < folds {
            return Err(Error::Stratification(format!(
                "class {} has {} documents, fewer than {folds} folds",
                corpus.class_names[class],
                group.len()
            )));
        }
        // Rotating the start fold per class keeps fold sizes balanced.
        for (k, idx) in group.into_iter().enumerate() {
            out[(k + class) % folds].push(idx);
        }
    }
    for f in &mut out {
        f.sort_unstable();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;
    use proptest::prelude::*;

    fn balanced(per_class: usize, k: usize) -> LabeledCorpus {
        let docs = (0..per_class * k)
            .map(|i| Document::from_tokens(format!("d{i}"), vec![format!("t{i}")], i % k))
            .collect();
        LabeledCorpus::new(docs, (0..k).map(|c| format!("c{c}")).collect(), "t").unwrap()
    }

    #[test]
    fn eighty_twenty_with_five_per_class() {
        let corpus = balanced(25, 4);
        let (train, test) = split_train_test(&corpus, 0.2, 11).unwrap();
        assert_eq!(train.len(), 80);
        assert_eq!(test.len(), 20);
        for c in 0..4 {
            assert_eq!(test.labels().iter().filter(|&&l| l == c).count(), 5);
        }
    }

    #[test]
    fn same_seed_same_partition() {
        let corpus = balanced(25, 4);
        let a = split_train_test(&corpus, 0.2, 3).unwrap();
        let b = split_train_test(&corpus, 0.2, 3).unwrap();
        assert_eq!(a, b);
        let c = split_train_test(&corpus, 0.2, 4).unwrap();
        assert_ne!(a.1, c.1);
    }

    #[test]
    fn extreme_fraction_is_stratification_error() {
        let corpus = balanced(5, 2);
        assert!(matches!(
            split_train_test(&corpus, 0.999, 1),
            Err(Error::Stratification(_))
        ));
    }

    #[test]
    fn singleton_class_cannot_stratify() {
        let docs = vec![
            Document::from_tokens("a", vec!["x".into()], 0),
            Document::from_tokens("b", vec!["x".into()], 0),
            Document::from_tokens("c", vec!["x".into()], 1),
        ];
        let corpus = LabeledCorpus::new(docs, vec!["p".into(), "q".into()], "").unwrap();
        assert!(split_train_test(&corpus, 0.5, 0).is_err());
    }

    #[test]
    fn folds_partition_and_balance() {
        let corpus = balanced(10, 4);
        let folds = stratified_folds(&corpus, 5, 9).unwrap();
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..40).collect::<Vec<_>>());
        for f in &folds {
            assert_eq!(f.len(), 8);
        }
    }

    proptest! {
        #[test]
        fn split_is_a_stratified_partition(
            sizes in proptest::collection::vec(2usize..30, 2..5),
            fraction in 0.1f64..0.5,
            seed in any::<u64>(),
        ) {
            let mut docs = Vec::new();
            for (c, &n) in sizes.iter().enumerate() {
                for j in 0..n {
                    docs.push(Document::from_tokens(format!("{c}-{j}"), vec!["t".into()], c));
                }
            }
            let k = sizes.len();
            let corpus = LabeledCorpus::new(docs, (0..k).map(|c| c.to_string()).collect(), "").unwrap();
            match split_train_test(&corpus, fraction, seed) {
                Ok((train, test)) => {
                    prop_assert_eq!(train.len() + test.len(), corpus.len());
                    let mut ids: Vec<&str> = train.documents.iter().chain(&test.documents).map(|d| d.id.as_str()).collect();
                    ids.sort_unstable();
                    ids.dedup();
                    prop_assert_eq!(ids.len(), corpus.len());
                    for (c, &n) in sizes.iter().enumerate() {
                        let got = test.labels().iter().filter(|&&l| l == c).count() as f64;
                        prop_assert!((got - n as f64 * fraction).abs() <= 1.0);
                    }
                }
                Err(Error::Stratification(_)) => {}
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }
    }
}
