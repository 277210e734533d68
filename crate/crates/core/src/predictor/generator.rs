//! Tree-structured generator: branching blocks grow the point set from one
//! root, GCN blocks update each level from its loop and ancestor terms.

use serde::{Deserialize, Serialize};

use crate::autograd::{Array, Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::nn::{uniform_init, Bound, Linear, ParamId, ParamStore, SeededRng, LEAKY_SLOPE};

/// Number of points every generator emits.
pub const GENERATED_POINTS: usize = 2048;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchingConfig {
    /// Branching degree of each layer.
    pub degrees: Vec<usize>,
    /// Feature width at the root followed by the output width of each layer.
    pub feature_widths: Vec<usize>,
    /// Support nodes in each loop term.
    pub k: usize,
}

impl Default for BranchingConfig {
    fn default() -> Self {
        Self {
            degrees: vec![2, 2, 2, 2, 2, 64],
            feature_widths: vec![96, 256, 256, 256, 128, 128, 3],
            k: 10,
        }
    }
}

impl BranchingConfig {
    pub fn leaves(&self) -> usize {
        self.degrees.iter().product()
    }

    /// Checks internal consistency; `generate` additionally needs 2048 leaves.
    pub fn validate(&self) -> Result<()> {
        if self.degrees.is_empty() || self.degrees.contains(&0) {
            return Err(Error::invalid("branching degrees must be nonempty and ≥ 1"));
        }
        if self.feature_widths.len() != self.degrees.len() + 1 {
            return Err(Error::invalid(format!(
                "{} degrees need {} feature widths, got {}",
                self.degrees.len(),
                self.degrees.len() + 1,
                self.feature_widths.len()
            )));
        }
        if self.feature_widths.contains(&0) || self.k == 0 {
            return Err(Error::invalid("widths and K must be ≥ 1"));
        }
        Ok(())
    }

    pub fn validate_output(&self) -> Result<()> {
        self.validate()?;
        if self.leaves() != GENERATED_POINTS {
            return Err(Error::invalid(format!(
                "branching degrees give {} points, expected {GENERATED_POINTS}",
                self.leaves()
            )));
        }
        if self.feature_widths.last() != Some(&3) {
            return Err(Error::invalid("last feature width must be 3"));
        }
        Ok(())
    }
}

/// Features of every level grown so far, with each point's ancestor path.
///
/// `ancestors[l][i][j]` is the index at level `j` of the level-`j` ancestor of
/// point `i` at level `l`, so every path at level `l` has length `l`.
#[derive(Clone)]
pub struct TreeState<'t> {
    pub levels: Vec<Var<'t>>,
    pub ancestors: Vec<Vec<Vec<usize>>>,
}

impl<'t> TreeState<'t> {
    /// A tree holding only root points (rows of `root`).
    pub fn root(root: Var<'t>) -> Self {
        let n = root.shape().0;
        Self {
            levels: vec![root],
            ancestors: vec![vec![Vec::new(); n]],
        }
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn level_size(&self, level: usize) -> usize {
        self.levels[level].shape().0
    }
}

/// Weights of one GCN block mapping level features of width `in_width` to
/// `out_width`.
#[derive(Debug, Clone)]
pub struct GcnBlockParams {
    /// K support maps, stacked as in_width × (K·in_width).
    pub support: ParamId,
    /// Aggregation of the K support nodes, (K·in_width) × out_width.
    pub support_out: ParamId,
    /// One map per ancestor level, (width of that level) × out_width.
    pub ancestor_maps: Vec<ParamId>,
    pub bias: ParamId,
    pub in_width: usize,
    pub out_width: usize,
    pub k: usize,
    /// Apply the leaky ReLU; off for the coordinate-emitting block.
    pub activate: bool,
}

impl GcnBlockParams {
    /// `ancestor_widths` lists the feature width of each level above this one.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut SeededRng,
        name: &str,
        in_width: usize,
        out_width: usize,
        ancestor_widths: &[usize],
        k: usize,
        activate: bool,
    ) -> Self {
        let support = store.add(
            format!("{name}.support"),
            uniform_init(rng, in_width, k * in_width, in_width),
        );
        let support_out = store.add(
            format!("{name}.support_out"),
            uniform_init(rng, k * in_width, out_width, k * in_width),
        );
        let ancestor_maps = ancestor_widths
            .iter()
            .enumerate()
            .map(|(j, &w)| store.add(format!("{name}.ancestor{j}"), uniform_init(rng, w, out_width, w)))
            .collect();
        let bias = store.add(format!("{name}.bias"), uniform_init(rng, 1, out_width, in_width));
        Self {
            support,
            support_out,
            ancestor_maps,
            bias,
            in_width,
            out_width,
            k,
            activate,
        }
    }

    pub fn zero(&self, store: &mut ParamStore) {
        for id in [self.support, self.support_out, self.bias]
            .into_iter()
            .chain(self.ancestor_maps.iter().copied())
        {
            store.get_mut(id).fill(0.0);
        }
    }
}

/// Updated features of `level`: `σ(F_K(p_i) + Σ_j U_j q_j + b)` where `q_j`
/// runs over the ancestors of `p_i`.
pub fn gcn_block<'t>(
    state: &TreeState<'t>,
    level: usize,
    params: &GcnBlockParams,
    bound: &Bound<'t>,
) -> Result<Var<'t>> {
    if level >= state.depth() {
        return Err(Error::invalid(format!("level {level} not grown yet")));
    }
    let x = state.levels[level];
    let (n, w) = x.shape();
    if w != params.in_width {
        return Err(Error::invalid(format!(
            "level {level} has width {w}, block expects {}",
            params.in_width
        )));
    }
    if params.ancestor_maps.len() != level {
        return Err(Error::invalid(format!(
            "block has {} ancestor maps, level {level} has {level} ancestors",
            params.ancestor_maps.len()
        )));
    }
    // The K support nodes are linear in p_i, so their aggregate collapses to
    // one matrix; multiplying the small factors first keeps this cheap.
    let loop_map = bound.var(params.support).matmul(bound.var(params.support_out));
    let mut out = x.matmul(loop_map) + bound.var(params.bias);
    let paths = &state.ancestors[level];
    for (j, &u) in params.ancestor_maps.iter().enumerate() {
        let q = state.levels[j];
        if q.shape().1 != bound.var(u).shape().0 {
            return Err(Error::invalid(format!(
                "ancestor level {j} has width {}, map expects {}",
                q.shape().1,
                bound.var(u).shape().0
            )));
        }
        let idx: Vec<usize> = paths.iter().map(|p| p[j]).collect();
        out = out + q.matmul(bound.var(u)).gather_rows(&idx);
    }
    debug_assert_eq!(out.shape(), (n, params.out_width));
    Ok(if params.activate {
        out.leaky_relu(LEAKY_SLOPE)
    } else {
        out
    })
}

/// Learned per-parent expansion into `degree` children.
#[derive(Debug, Clone)]
pub struct BranchParams {
    pub map: Linear,
    pub degree: usize,
    pub width: usize,
}

impl BranchParams {
    pub fn new(store: &mut ParamStore, rng: &mut SeededRng, name: &str, width: usize, degree: usize) -> Self {
        Self {
            map: Linear::new(store, rng, name, width, degree * width, true),
            degree,
            width,
        }
    }
}

/// Grows level `level + 1` from `level`: child `i·d + c` is the `c`-th head
/// of parent `i` and inherits the parent's ancestor path extended by `i`.
pub fn branch<'t>(
    state: &mut TreeState<'t>,
    level: usize,
    params: &BranchParams,
    bound: &Bound<'t>,
) -> Result<()> {
    if level + 1 != state.depth() {
        return Err(Error::invalid(format!(
            "can only branch the deepest level {}, got {level}",
            state.depth() - 1
        )));
    }
    let x = state.levels[level];
    let (n, w) = x.shape();
    if w != params.width {
        return Err(Error::invalid(format!(
            "level {level} has width {w}, branch expects {}",
            params.width
        )));
    }
    let d = params.degree;
    let children = params
        .map
        .forward(bound, x)
        .leaky_relu(LEAKY_SLOPE)
        .reshape(n * d, w);
    let parent_paths = &state.ancestors[level];
    let mut paths = Vec::with_capacity(n * d);
    for (i, path) in parent_paths.iter().enumerate() {
        for _ in 0..d {
            let mut p = path.clone();
            p.push(i);
            paths.push(p);
        }
    }
    state.levels.push(children);
    state.ancestors.push(paths);
    Ok(())
}

/// Branch followed by a GCN block, once per degree.
#[derive(Debug, Clone)]
pub struct Generator {
    pub config: BranchingConfig,
    pub branches: Vec<BranchParams>,
    pub blocks: Vec<GcnBlockParams>,
}

impl Generator {
    pub fn new(store: &mut ParamStore, rng: &mut SeededRng, name: &str, config: BranchingConfig) -> Result<Self> {
        config.validate()?;
        let w = &config.feature_widths;
        let layers = config.degrees.len();
        let mut branches = Vec::with_capacity(layers);
        let mut blocks = Vec::with_capacity(layers);
        for (l, &d) in config.degrees.iter().enumerate() {
            branches.push(BranchParams::new(store, rng, &format!("{name}.branch{l}"), w[l], d));
            // Level l+1 holds width w[l] after branching; its ancestors sit at
            // levels 0..=l with their post-update widths.
            blocks.push(GcnBlockParams::new(
                store,
                rng,
                &format!("{name}.gcn{l}"),
                w[l],
                w[l + 1],
                &w[..=l],
                config.k,
                l + 1 < layers,
            ));
        }
        Ok(Self {
            config,
            branches,
            blocks,
        })
    }

    /// Leaf features for a 1×latent code; the last layer's width is 3 for
    /// point output.
    pub fn forward<'t>(&self, bound: &Bound<'t>, z: Var<'t>) -> Result<Var<'t>> {
        let mut state = TreeState::root(z);
        self.grow(bound, &mut state)?;
        Ok(*state.levels.last().expect("root present"))
    }

    /// Runs every layer on `state`, which must hold only the root.
    pub fn grow<'t>(&self, bound: &Bound<'t>, state: &mut TreeState<'t>) -> Result<()> {
        for (l, (b, g)) in self.branches.iter().zip(&self.blocks).enumerate() {
            branch(state, l, b, bound)?;
            let updated = gcn_block(state, l + 1, g, bound)?;
            state.levels[l + 1] = updated;
        }
        Ok(())
    }
}

/// Generates the cloud for latent `z` with the weights in `store`.
pub fn generate(generator: &Generator, store: &ParamStore, z: &[f64]) -> Result<PointCloud> {
    generator.config.validate_output()?;
    let width = generator.config.feature_widths[0];
    if z.len() != width {
        return Err(Error::invalid(format!(
            "latent has {} entries, generator root width is {width}",
            z.len()
        )));
    }
    let tape = Tape::new();
    let p = store.bind(&tape);
    let root = tape.constant(Array::from_shape_vec((1, width), z.to_vec()).expect("shape"));
    let out = generator.forward(&p, root)?;
    PointCloud::from_array(&out.value())
}
