//! Bounded best-k selection with a strict total order: higher score first,
//! then lower tie rank.

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Candidate {
    pub score: f64,
    /// Position of the reference id in ascending id order.
    pub rank: u32,
    pub index: u32,
}

impl Candidate {
    fn beats(&self, other: &Candidate) -> bool {
        self.score > other.score || (self.score == other.score && self.rank < other.rank)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct TopK {
    k: usize,
    items: Vec<Candidate>,
}

impl TopK {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            items: Vec::with_capacity(k + 1),
        }
    }

    pub fn push(&mut self, c: Candidate) {
        if self.items.len() == self.k {
            match self.items.last() {
                Some(worst) if c.beats(worst) => {}
                _ => return,
            }
        }
        let pos = self.items.partition_point(|x| x.beats(&c));
        self.items.insert(pos, c);
        self.items.truncate(self.k);
    }

    pub fn into_sorted(self) -> Vec<Candidate> {
        self.items
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(score: f64, rank: u32) -> Candidate {
        Candidate {
            score,
            rank,
            index: rank,
        }
    }

    #[test]
    fn ties_prefer_lower_rank() {
        let mut t = TopK::new(2);
        for cand in [c(0.5, 3), c(0.9, 7), c(0.5, 1), c(0.5, 2)] {
            t.push(cand);
        }
        let got: Vec<_> = t.into_sorted().iter().map(|x| x.rank).collect();
        assert_eq!(got, [7, 1]);
    }

    proptest! {
        #[test]
        fn matches_full_sort(scores in proptest::collection::vec(-4i32..4, 0..60), k in 1usize..10) {
            let cands: Vec<_> = scores.iter().enumerate().map(|(i, &s)| c(s as f64 / 4.0, i as u32)).collect();
            let mut t = TopK::new(k);
            for &x in cands.iter().rev() {
                t.push(x);
            }
            let mut sorted = cands.clone();
            sorted.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap().then(a.rank.cmp(&b.rank)));
            sorted.truncate(k);
            prop_assert_eq!(t.into_sorted(), sorted);
        }
    }
}
