use std::collections::HashMap;

/// Precision, recall and F1 of one comparison.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Prf {
    pub p: f64,
    pub r: f64,
    pub f1: f64,
}

impl Prf {
    pub const ONE: Prf = Prf {
        p: 1.0,
        r: 1.0,
        f1: 1.0,
    };

    pub fn from_pr(p: f64, r: f64) -> Self {
        let f1 = if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        };
        Prf { p, r, f1 }
    }

    fn from_overlap(overlap: usize, candidate: usize, reference: usize) -> Self {
        match (candidate, reference) {
            (0, 0) => Prf::ONE,
            (0, _) | (_, 0) => Prf::default(),
            _ => Prf::from_pr(
                overlap as f64 / candidate as f64,
                overlap as f64 / reference as f64,
            ),
        }
    }
}

/// Clipped unigram overlap: each candidate token earns credit at most as
/// many times as it occurs in the reference.
pub fn rouge1(candidate: &[String], reference: &[String]) -> Prf {
    let mut available: HashMap<&str, usize> = HashMap::new();
    for t in reference {
        *available.entry(t).or_default() += 1;
    }
    let mut overlap = 0;
    for t in candidate {
        if let Some(n) = available.get_mut(t.as_str()) {
            if *n > 0 {
                *n -= 1;
                overlap += 1;
            }
        }
    }
    Prf::from_overlap(overlap, candidate.len(), reference.len())
}

/// Length of the longest common subsequence, O(|a|·|b|) time, O(|b|) space.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// ROUGE-L with β = 1.
pub fn rouge_l(candidate: &[String], reference: &[String]) -> Prf {
    Prf::from_overlap(
        lcs_len(candidate, reference),
        candidate.len(),
        reference.len(),
    )
}
