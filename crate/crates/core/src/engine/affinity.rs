//! Time-decayed pairwise affinity.

/// Symmetric pair map over participant indices, stored as an upper triangle.
/// The diagonal is never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    n: usize,
    vals: Vec<f64>,
}

impl AffinityMatrix {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            vals: vec![0.0; n * n.saturating_sub(1) / 2],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        assert!(i != j && i < self.n && j < self.n, "bad pair ({i}, {j})");
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        a * (2 * self.n - a - 1) / 2 + (b - a - 1)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.vals[self.idx(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.vals[k] = v;
    }

    /// Adds `c` to every pair.
    pub fn shift(&mut self, c: f64) {
        for v in &mut self.vals {
            *v += c;
        }
    }

    /// Mean affinity between two disjoint groups.
    pub fn average(&self, xs: &[usize], ys: &[usize]) -> f64 {
        let mut sum = 0.0;
        for &x in xs {
            for &y in ys {
                sum += self.get(x, y);
            }
        }
        sum / (xs.len() * ys.len()) as f64
    }

    /// Decays every pair by `dt` at the given half-life, then adds the
    /// instantaneous scores.
    pub fn update(&mut self, dt: f64, half_life: f64, scores: &[PairScore]) {
        let factor = decay_factor(dt, half_life);
        for v in &mut self.vals {
            *v *= factor;
        }
        for s in scores {
            let k = self.idx(s.i, s.j);
            self.vals[k] += s.value;
        }
    }
}

pub fn decay_factor(dt: f64, half_life: f64) -> f64 {
    (-dt.max(0.0) / half_life).exp2()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weights {
    pub align: f64,
    pub overlap: f64,
    pub coord: f64,
}

impl Weights {
    /// Alignment raises affinity, overlap lowers it, a shared coordinated
    /// action adds a bonus.
    pub fn score(&self, alignment: f64, overlap_frac: f64, coord: bool) -> f64 {
        self.align * alignment - self.overlap * overlap_frac + if coord { self.coord } else { 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairScore {
    pub i: usize,
    pub j: usize,
    pub value: f64,
}
