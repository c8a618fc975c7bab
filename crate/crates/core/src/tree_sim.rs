//! Generation-by-generation simulation of the BMC on the full binary tree.
//!
//! Generation `g` is stored in level order: node `(g, k)` sits at offset `k`
//! and has heap index `2^g + k`, its children sit at offsets `2k` and
//! `2k + 1` of generation `g + 1`. The noise of a child is read from the
//! replica stream at the child's heap index, the root draw at counter 1, so
//! a tree is a pure function of its stream however its generations are filled.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{BarParams, ChildSampler};
use crate::numeric::{pairwise_sum_by, KahanSum};
use crate::rng::RandomStream;
use crate::spectral::{same_scale, SpectralFn};

/// Deepest generation that may be simulated (`2^22` values per generation).
pub const N_MAX: usize = 22;

const ROOT_COUNTER: u64 = 1;
// Generations with at least this many parents are filled in parallel.
const PAR_FILL_MIN_PARENTS: usize = 1 << 14;
const PAR_FILL_CHUNK: usize = 1 << 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TreeIndex {
    pub gen: u32,
    pub pos: u64,
}

impl TreeIndex {
    pub const ROOT: TreeIndex = TreeIndex { gen: 0, pos: 0 };

    pub fn new(gen: u32, pos: u64) -> Option<Self> {
        (gen < 63 && pos < (1u64 << gen)).then_some(TreeIndex { gen, pos })
    }

    pub fn heap(&self) -> u64 {
        (1u64 << self.gen) + self.pos
    }

    pub fn children(&self) -> (TreeIndex, TreeIndex) {
        let gen = self.gen + 1;
        (
            TreeIndex { gen, pos: 2 * self.pos },
            TreeIndex {
                gen,
                pos: 2 * self.pos + 1,
            },
        )
    }

    pub fn parent(&self) -> Option<TreeIndex> {
        (self.gen > 0).then(|| TreeIndex {
            gen: self.gen - 1,
            pos: self.pos / 2,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationBuffer {
    pub gen: usize,
    pub values: Vec<f64>,
}

impl GenerationBuffer {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InitialLaw {
    Dirac { x0: f64 },
    /// The invariant law `N(0, σ_a²)`; symmetric kernels only.
    Stationary,
    Gaussian { mean: f64, var: f64 },
}

impl InitialLaw {
    pub fn validate(&self, params: &BarParams) -> Result<()> {
        match *self {
            InitialLaw::Dirac { x0 } if !x0.is_finite() => {
                Err(Error::InvalidParams(format!("dirac location must be finite, got {x0}")))
            }
            InitialLaw::Gaussian { mean, var } if !(mean.is_finite() && var.is_finite() && var > 0.0) => Err(
                Error::InvalidParams(format!("gaussian initial law needs var > 0, got mean {mean}, var {var}")),
            ),
            InitialLaw::Stationary => params.sigma_a().map(|_| ()),
            _ => Ok(()),
        }
    }

    pub fn sample_root(&self, params: &BarParams, stream: &RandomStream) -> Result<f64> {
        Ok(match *self {
            InitialLaw::Dirac { x0 } => x0,
            InitialLaw::Stationary => params.sigma_a()? * stream.normal(ROOT_COUNTER),
            InitialLaw::Gaussian { mean, var } => mean + var.sqrt() * stream.normal(ROOT_COUNTER),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    /// `(f, 0, 0, ...)`: only the last generation contributes.
    Single,
    /// `(f, f, ...)`: every generation contributes.
    Tree,
    /// `(f_0, ..., f_{L-1}, 0, ...)`.
    Custom,
}

/// A sequence `𝔣 = (f_ℓ)` of test functions.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalSeq {
    shape: Shape,
    funcs: Vec<SpectralFn>,
}

impl FunctionalSeq {
    pub fn single(f: SpectralFn) -> Self {
        FunctionalSeq {
            shape: Shape::Single,
            funcs: vec![f],
        }
    }

    pub fn tree(f: SpectralFn) -> Self {
        FunctionalSeq {
            shape: Shape::Tree,
            funcs: vec![f],
        }
    }

    pub fn custom(funcs: Vec<SpectralFn>) -> Result<Self> {
        let first = funcs
            .first()
            .ok_or_else(|| Error::InvalidParams("custom sequence needs at least one function".into()))?;
        for f in &funcs[1..] {
            same_scale(first.sigma_a(), f.sigma_a())?;
        }
        Ok(FunctionalSeq {
            shape: Shape::Custom,
            funcs,
        })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn funcs(&self) -> &[SpectralFn] {
        &self.funcs
    }

    pub fn sigma_a(&self) -> f64 {
        self.funcs[0].sigma_a()
    }

    /// `f_ℓ`, or `None` where the sequence is zero.
    pub fn get(&self, ell: usize) -> Option<&SpectralFn> {
        match self.shape {
            Shape::Single => (ell == 0).then(|| &self.funcs[0]),
            Shape::Tree => Some(&self.funcs[0]),
            Shape::Custom => self.funcs.get(ell),
        }
    }

    /// Number of leading terms that may be nonzero; `None` for the tree shape.
    pub fn support_len(&self) -> Option<usize> {
        match self.shape {
            Shape::Single => Some(1),
            Shape::Tree => None,
            Shape::Custom => Some(self.funcs.len()),
        }
    }

    pub fn map(&self, op: impl Fn(&SpectralFn) -> SpectralFn) -> FunctionalSeq {
        FunctionalSeq {
            shape: self.shape,
            funcs: self.funcs.iter().map(op).collect(),
        }
    }

    pub fn centered(&self) -> FunctionalSeq {
        self.map(SpectralFn::center)
    }
}

fn check_depth(n: usize, bytes: u64) -> Result<()> {
    if n > N_MAX {
        return Err(Error::ResourceCap { n, max: N_MAX, bytes });
    }
    Ok(())
}

fn fill_children(parents: &[f64], children: &mut [f64], gen: usize, sampler: &ChildSampler, stream: &RandomStream) {
    debug_assert_eq!(children.len(), 2 * parents.len());
    let base = 1u64 << gen;
    let fill = |first: usize, out: &mut [f64]| {
        for (j, pair) in out.chunks_exact_mut(2).enumerate() {
            let k = first + j;
            let (y, z) = sampler.sample(parents[k], stream, base + k as u64);
            pair[0] = y;
            pair[1] = z;
        }
    };
    if parents.len() >= PAR_FILL_MIN_PARENTS {
        children
            .par_chunks_mut(2 * PAR_FILL_CHUNK)
            .enumerate()
            .for_each(|(c, out)| fill(c * PAR_FILL_CHUNK, out));
    } else {
        fill(0, children);
    }
}

/// All generations `0..=n`.
pub fn simulate_full(nu: &InitialLaw, params: &BarParams, n: usize, stream: &RandomStream) -> Result<Vec<GenerationBuffer>> {
    check_depth(n, 8 * ((2u64 << n.min(62)) - 1))?;
    nu.validate(params)?;
    let sampler = ChildSampler::new(params);
    let mut gens = Vec::with_capacity(n + 1);
    gens.push(GenerationBuffer {
        gen: 0,
        values: vec![nu.sample_root(params, stream)?],
    });
    for g in 0..n {
        let mut next = vec![0.0; 2 << g];
        fill_children(&gens[g].values, &mut next, g, &sampler, stream);
        gens.push(GenerationBuffer { gen: g + 1, values: next });
    }
    Ok(gens)
}

/// Generations `0..=n` handed to `observer` in order; two buffers are kept alive.
pub fn simulate_streaming(
    nu: &InitialLaw,
    params: &BarParams,
    n: usize,
    stream: &RandomStream,
    mut observer: impl FnMut(&GenerationBuffer),
) -> Result<()> {
    check_depth(n, 8 * 3 * (1u64 << n.min(62)))?;
    nu.validate(params)?;
    let sampler = ChildSampler::new(params);
    let mut cur = GenerationBuffer {
        gen: 0,
        values: Vec::with_capacity(1 << n),
    };
    cur.values.push(nu.sample_root(params, stream)?);
    let mut next = GenerationBuffer {
        gen: 0,
        values: Vec::with_capacity(1 << n),
    };
    observer(&cur);
    for g in 0..n {
        next.values.clear();
        next.values.resize(2 << g, 0.0);
        next.gen = g + 1;
        fill_children(&cur.values, &mut next.values, g, &sampler, stream);
        std::mem::swap(&mut cur, &mut next);
        observer(&cur);
    }
    Ok(())
}

/// `M_A(f) = Σ_{i ∈ A} f(X_i)` over one generation, summed pairwise.
pub fn m_sum(buf: &GenerationBuffer, f: &SpectralFn) -> f64 {
    if f.is_zero() {
        return 0.0;
    }
    pairwise_sum_by(&buf.values, &|x| f.eval(x))
}

/// `M_{𝔾_g}(f_j)` for every generation `g = 0..=n` and function `f_j`.
pub fn generation_sums(
    nu: &InitialLaw,
    params: &BarParams,
    n: usize,
    stream: &RandomStream,
    funcs: &[SpectralFn],
) -> Result<Vec<Vec<f64>>> {
    let mut sums = Vec::with_capacity(n + 1);
    simulate_streaming(nu, params, n, stream, |buf| {
        sums.push(funcs.iter().map(|f| m_sum(buf, f)).collect());
    })?;
    Ok(sums)
}

/// Streaming accumulator for `N_{n,∅}(𝔣) = |𝔾_n|^{-1/2} Σ_{ℓ=0}^n M_{𝔾_{n-ℓ}}(f̃_ℓ)`.
#[derive(Debug, Clone)]
pub struct NStatistic {
    n: usize,
    // f̃_{n-g} for generation g
    per_gen: Vec<Option<SpectralFn>>,
    total: KahanSum,
}

impl NStatistic {
    pub fn new(fseq: &FunctionalSeq, n: usize) -> Self {
        let per_gen = (0..=n)
            .map(|g| fseq.get(n - g).map(SpectralFn::center).filter(|f| !f.is_zero()))
            .collect();
        NStatistic {
            n,
            per_gen,
            total: KahanSum::new(),
        }
    }

    pub fn observe(&mut self, buf: &GenerationBuffer) {
        if let Some(Some(f)) = self.per_gen.get(buf.gen) {
            self.total.add(m_sum(buf, f));
        }
    }

    pub fn value(&self) -> f64 {
        self.total.value() * 0.5f64.powf(self.n as f64 / 2.0)
    }
}

/// `N_{n,∅}(𝔣)` from stored generations `0..=n`.
pub fn n_statistic(gens: &[GenerationBuffer], fseq: &FunctionalSeq, n: usize) -> Result<f64> {
    if gens.len() <= n {
        return Err(Error::InvalidParams(format!(
            "need generations 0..={n}, got {} buffers",
            gens.len()
        )));
    }
    let mut acc = NStatistic::new(fseq, n);
    for buf in &gens[..=n] {
        acc.observe(buf);
    }
    Ok(acc.value())
}

/// Stream of replica `r` under `master_seed`.
pub fn replica_stream(master: &RandomStream, r: u64) -> RandomStream {
    master.split(r)
}

/// Runs `job` for every replica in parallel; results are in replica order.
pub fn replicate<T: Send>(
    master: &RandomStream,
    replicas: usize,
    job: impl Fn(usize, &RandomStream) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    if replicas == 0 {
        return Err(Error::InvalidParams("replica count must be at least 1".into()));
    }
    (0..replicas)
        .into_par_iter()
        .map(|r| job(r, &replica_stream(master, r as u64)))
        .collect()
}

/// Runs `f` on a dedicated pool of `threads` workers (the global pool when `None`).
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t.max(1))
                .build()
                .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}
