use rand::seq::SliceRandom;
use rand::Rng;

/// Shuffled minibatch indices; reshuffles each time the data is exhausted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchSampler {
    pub perm: Vec<usize>,
    pub pos: usize,
    pub epoch: u64,
}

impl BatchSampler {
    pub fn new(len: usize) -> Self {
        assert!(len > 0, "cannot sample from an empty dataset");
        Self {
            perm: (0..len).collect(),
            // Forces a shuffle before the first batch.
            pos: len,
            epoch: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn next_batch<R: Rng + ?Sized>(&mut self, n: usize, rng: &mut R) -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.pos == self.perm.len() {
                self.perm.shuffle(rng);
                self.pos = 0;
                self.epoch += 1;
            }
            let k = (n - out.len()).min(self.perm.len() - self.pos);
            out.extend_from_slice(&self.perm[self.pos..self.pos + k]);
            self.pos += k;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn each_epoch_visits_every_index_once() {
        let mut s = BatchSampler::new(10);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut seen: Vec<usize> = (0..5).flat_map(|_| s.next_batch(4, &mut rng)).collect();
        assert_eq!(seen.len(), 20);
        seen.sort();
        assert_eq!(seen, (0..10).flat_map(|i| [i, i]).collect::<Vec<_>>());
        assert_eq!(s.epoch, 2);
    }
}
