use serde::{Deserialize, Serialize};

use super::{merge, run, AlpfConfig, AlpfError, AlpfTrace, Mode};
use crate::expr::Point;
use crate::inner::{self, InnerConfig, InnerResult};
use crate::lagrangian::AugmentedObjective;
use crate::model::CnfProblem;

/// A split of the lifted variables into disjoint blocks such that every
/// constraint references variables of a single block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPartition {
    /// Zero-based `x` indices of each block.
    pub x_blocks: Vec<Vec<usize>>,
    /// Zero-based `y` indices of each block.
    pub y_blocks: Vec<Vec<usize>>,
    /// Block owning each inequality.
    pub ineq_block: Vec<usize>,
    /// Block owning each equality.
    pub eq_block: Vec<usize>,
}

impl BlockPartition {
    /// Checks that the blocks cover every variable exactly once and assigns
    /// each constraint to its block.
    pub fn new(prob: &CnfProblem, x_blocks: Vec<Vec<usize>>, y_blocks: Vec<Vec<usize>>) -> Result<Self, AlpfError> {
        if x_blocks.is_empty() || x_blocks.len() != y_blocks.len() {
            return Err(AlpfError::Partition(format!("{} x blocks and {} y blocks", x_blocks.len(), y_blocks.len())));
        }
        let n = prob.n();
        let mut owner = vec![None; prob.dim()];
        for (b, (xs, ys)) in x_blocks.iter().zip(&y_blocks).enumerate() {
            let globals = xs.iter().map(|&i| (i, i < n, i)).chain(ys.iter().map(|&i| (n + i, i < prob.m(), i)));
            for (g, in_range, i) in globals {
                if !in_range {
                    return Err(AlpfError::Partition(format!("index {} out of range in block {}", i + 1, b + 1)));
                }
                if owner[g].replace(b).is_some() {
                    return Err(AlpfError::Partition(format!("variable {} assigned twice", describe(g, n))));
                }
            }
        }
        if let Some(g) = owner.iter().position(Option::is_none) {
            return Err(AlpfError::Partition(format!("variable {} not in any block", describe(g, n))));
        }
        let owner: Vec<usize> = owner.into_iter().map(|o| o.unwrap_or(0)).collect();
        let assign = |kind: &str, j: usize, support: &[usize]| -> Result<usize, AlpfError> {
            let mut blocks = support.iter().map(|&i| owner[i]);
            let first = blocks.next().unwrap_or(0);
            if blocks.any(|b| b != first) {
                return Err(AlpfError::Partition(format!("{kind} {} spans several blocks", j + 1)));
            }
            Ok(first)
        };
        let ineq_block = prob
            .ineqs()
            .iter()
            .enumerate()
            .map(|(i, c)| assign("inequality", i, c.support()))
            .collect::<Result<_, _>>()?;
        let eq_block =
            prob.eqs().iter().enumerate().map(|(j, c)| assign("equality", j, c.support())).collect::<Result<_, _>>()?;
        Ok(BlockPartition { x_blocks, y_blocks, ineq_block, eq_block })
    }

    /// Splits `x` into `p` contiguous groups of near-equal size and places
    /// each `y` variable in the block of the `x` variables it is linked to
    /// through shared constraints. `y` variables linked to no `x` variable go
    /// to the first block.
    pub fn contiguous(prob: &CnfProblem, p: usize) -> Result<Self, AlpfError> {
        let n = prob.n();
        if p == 0 || p > n {
            return Err(AlpfError::Partition(format!("cannot split {n} variables into {p} blocks")));
        }
        let mut x_blocks = Vec::with_capacity(p);
        let mut next = 0;
        for b in 0..p {
            let size = n / p + usize::from(b < n % p);
            x_blocks.push((next..next + size).collect::<Vec<_>>());
            next += size;
        }
        let mut x_owner = vec![0; n];
        for (b, xs) in x_blocks.iter().enumerate() {
            for &i in xs {
                x_owner[i] = b;
            }
        }

        let mut sets = DisjointSets::new(prob.dim());
        for c in prob.ineqs().iter().chain(prob.eqs()) {
            if let Some((&first, rest)) = c.support().split_first() {
                for &i in rest {
                    sets.union(first, i);
                }
            }
        }
        let mut root_block: Vec<Option<usize>> = vec![None; prob.dim()];
        for (i, &owner) in x_owner.iter().enumerate() {
            let root = sets.find(i);
            match root_block[root] {
                Some(b) if b != owner => {
                    return Err(AlpfError::Partition(format!(
                        "constraints link x[{}] to variables of block {}",
                        i + 1,
                        b + 1
                    )))
                }
                _ => root_block[root] = Some(owner),
            }
        }
        let mut y_blocks = vec![Vec::new(); p];
        for j in 0..prob.m() {
            let root = sets.find(n + j);
            y_blocks[root_block[root].unwrap_or(0)].push(j);
        }
        Self::new(prob, x_blocks, y_blocks)
    }

    pub fn len(&self) -> usize {
        self.x_blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_blocks.is_empty()
    }

    /// Flattened indices of block `b`, sorted.
    fn free(&self, b: usize, n: usize) -> Vec<usize> {
        let mut free: Vec<usize> =
            self.x_blocks[b].iter().copied().chain(self.y_blocks[b].iter().map(|&j| n + j)).collect();
        free.sort_unstable();
        free
    }

    /// One Gauss–Seidel cycle: minimizes the augmented function over each
    /// block in turn with the others held at their latest values.
    pub(super) fn sweep(
        &self,
        prob: &CnfProblem,
        u: &[f64],
        v: &[f64],
        c: f64,
        from: &[f64],
        cfg: &InnerConfig,
    ) -> Result<InnerResult, AlpfError> {
        let n = prob.n();
        let mut z = from.to_vec();
        let mut acc = None;
        for b in 0..self.len() {
            let free = self.free(b, n);
            if free.is_empty() {
                continue;
            }
            let base = Point::from_flat(&z, n);
            let obj = AugmentedObjective::restricted(prob, u, v, c, &base, free);
            let res = inner::minimize(&obj, &obj.free_values(&z), cfg)?;
            z = obj.embed(&res.point);
            acc = Some(merge(acc, res));
        }
        let mut res = acc.expect("partition has a nonempty block");
        res.point = z;
        Ok(res)
    }
}

fn describe(g: usize, n: usize) -> String {
    if g < n {
        format!("x[{}]", g + 1)
    } else {
        format!("y[{}]", g - n + 1)
    }
}

struct DisjointSets {
    parent: Vec<usize>,
}

impl DisjointSets {
    fn new(size: usize) -> Self {
        DisjointSets { parent: (0..size).collect() }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[rb] = ra;
        }
    }
}

/// Runs the decomposed loop: each outer iteration is one cycle over the
/// blocks with penalty weight `σₖ/2` (`σ₁ = cfg.rho0`), followed by the
/// multiplier updates. Records carry the applied weight `σₖ/2` as `rho`.
/// Stops once `e < ε`.
pub fn solve_decomposed(
    prob: &CnfProblem,
    partition: &BlockPartition,
    cfg: &AlpfConfig,
) -> Result<AlpfTrace, AlpfError> {
    if partition.ineq_block.len() != prob.s() || partition.eq_block.len() != prob.r() {
        return Err(AlpfError::Partition("partition was built for a different problem".into()));
    }
    run(prob, cfg, Mode::Decomposed(partition))
}
