//! Parallel matrix multiplication over the 4D grid.
//!
//! Every fully connected layer `O = I * W` is distributed the same way:
//! the weight is tiled into blocks over the X-Y plane of the grid, each block
//! is flat-sharded along Z, and the whole thing is replicated across the data
//! axis. Activations split their rows over (data, Z) and their columns over
//! the axis that tiles the weight's rows, and are replicated across the
//! remaining tensor axis.
//!
//! A forward pass all-gathers the weight shards along Z, multiplies locally,
//! and all-reduces partial outputs along the contraction axis. The backward
//! pass reuses the cached input and gathered weight: the input gradient is
//! summed along the output-column axis, and the weight gradient is
//! reduce-scattered back into shards along Z. Consecutive layers swap the
//! roles of X and Y ("transposed" layers), which lets one layer's output
//! feed the next without reshuffling.
//!
//! The serial reference implementation in [`oracle`] computes the same loss
//! and gradients with plain loops and no distribution at all; tests hold the
//! distributed path to it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{Axis, Grid, GridConfig};
use crate::matrix::{matmul_with_mode, DenseMatrix, MatmulMode};
use crate::simnet::{CommTag, Phase, SimNet};

// ---------------------------------------------------------------------------
// Layer specification
// ---------------------------------------------------------------------------

/// Shape of one fully connected layer: `I` is `m x k`, `W` is `k x n`.
/// `transposed` swaps the roles of the X and Y axes for this layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct LayerSpec {
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub transposed: bool,
}

/// Axis that tiles weight rows (and splits input columns): Y for normal
/// layers, X for transposed ones.
pub fn row_weight_axis(transposed: bool) -> Axis {
    if transposed {
        Axis::X
    } else {
        Axis::Y
    }
}

/// Axis that tiles weight columns (and splits output columns): X for normal
/// layers, Y for transposed ones.
pub fn col_weight_axis(transposed: bool) -> Axis {
    if transposed {
        Axis::Y
    } else {
        Axis::X
    }
}

impl LayerSpec {
    pub fn new(m: usize, k: usize, n: usize) -> Self {
        LayerSpec { m, k, n, transposed: false }
    }

    pub fn with_transposed(mut self, transposed: bool) -> Self {
        self.transposed = transposed;
        self
    }

    /// Extents of the axes tiling weight rows and columns.
    pub fn tile_extents(&self, config: &GridConfig) -> (usize, usize) {
        (
            config.extent(row_weight_axis(self.transposed)),
            config.extent(col_weight_axis(self.transposed)),
        )
    }

    /// Checks every divisibility the distribution needs, naming the axis
    /// that fails.
    pub fn validate(&self, config: &GridConfig) -> Result<()> {
        if self.m == 0 || self.k == 0 || self.n == 0 {
            return Err(Error::Shape(format!(
                "layer dimensions must be nonzero, got m={} k={} n={}",
                self.m, self.k, self.n
            )));
        }
        let row_split = config.g_z * config.g_data;
        if self.m % row_split != 0 {
            return Err(Error::Shape(format!(
                "batch rows m={} not divisible by g_z*g_data={row_split}",
                self.m
            )));
        }
        let (g_row, g_col) = self.tile_extents(config);
        if self.k % g_row != 0 {
            return Err(Error::Shape(format!(
                "k={} not divisible by {}={g_row}",
                self.k,
                row_weight_axis(self.transposed)
            )));
        }
        if self.n % g_col != 0 {
            return Err(Error::Shape(format!(
                "n={} not divisible by {}={g_col}",
                self.n,
                col_weight_axis(self.transposed)
            )));
        }
        let block = (self.k / g_row) * (self.n / g_col);
        if block % config.g_z != 0 {
            return Err(Error::Shape(format!(
                "weight block of {block} elements not divisible by g_z={}",
                config.g_z
            )));
        }
        Ok(())
    }

    /// Per-rank logical payload element counts for the collectives of one
    /// training step of this layer. `fwd_output` and `bwd_input` use the
    /// per-data-replica batch rows.
    pub fn collective_payloads(&self, config: &GridConfig) -> CollectivePayloads {
        let (g_row, g_col) = self.tile_extents(config);
        let block = (self.k / g_row) * (self.n / g_col);
        let m_local = self.m / config.g_data / config.g_z;
        CollectivePayloads {
            weight_block: block,
            fwd_output: m_local * (self.n / g_col),
            bwd_input: m_local * (self.k / g_row),
            weight_shard: block / config.g_z,
        }
    }
}

/// Logical element counts moved by each collective of one layer step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CollectivePayloads {
    /// All-gathered weight block (also the reduce-scatter input).
    pub weight_block: usize,
    /// Partial output summed along the contraction axis in forward.
    pub fwd_output: usize,
    /// Partial input gradient summed along the output-column axis.
    pub bwd_input: usize,
    /// Weight-gradient shard synchronized across the data axis.
    pub weight_shard: usize,
}

/// Specs for a stack of layers on shared batch rows, alternating the
/// transposed flag so consecutive layers chain without redistribution.
/// `widths[0]` is the input width; each adjacent pair is one layer.
pub fn alternating_specs(batch_rows: usize, widths: &[usize]) -> Vec<LayerSpec> {
    widths
        .windows(2)
        .enumerate()
        .map(|(idx, w)| LayerSpec::new(batch_rows, w[0], w[1]).with_transposed(idx % 2 == 1))
        .collect()
}

// ---------------------------------------------------------------------------
// Sharded matrices
// ---------------------------------------------------------------------------

/// How a [`ShardedMatrix`] maps onto the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// Rows split over (data, Z); columns split over `col_axis` (X or Y);
    /// replicated across the remaining tensor axis.
    Activation { col_axis: Axis },
    /// Row blocks over `row_axis`, column blocks over `col_axis`, each block
    /// flat-sharded along Z; replicated across the data axis.
    Weight { row_axis: Axis, col_axis: Axis },
}

/// A global matrix held as per-rank local buffers.
#[derive(Debug, Clone)]
pub struct ShardedMatrix {
    rows: usize,
    cols: usize,
    layout: Layout,
    locals: Vec<Vec<f64>>,
}

impl ShardedMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn local(&self, rank: usize) -> &[f64] {
        &self.locals[rank]
    }

    /// Tiles `w` over the X-Y plane (respecting `transposed`), flat-shards
    /// each block along Z, replicates across data.
    pub fn shard_weight(w: &DenseMatrix, grid: &Grid, spec: &LayerSpec) -> Result<Self> {
        if (w.rows(), w.cols()) != (spec.k, spec.n) {
            return Err(Error::Shape(format!(
                "weight is {}x{}, layer wants {}x{}",
                w.rows(),
                w.cols(),
                spec.k,
                spec.n
            )));
        }
        spec.validate(grid.config())?;
        let config = grid.config();
        let row_axis = row_weight_axis(spec.transposed);
        let col_axis = col_weight_axis(spec.transposed);
        let (g_row, g_col) = spec.tile_extents(config);
        let (block_rows, block_cols) = (spec.k / g_row, spec.n / g_col);
        let shard_len = block_rows * block_cols / config.g_z;

        let locals = (0..grid.total_workers())
            .map(|rank| {
                let c = grid.rank_to_coords(rank);
                let block = w.block(
                    c.along(row_axis) * block_rows,
                    block_rows,
                    c.along(col_axis) * block_cols,
                    block_cols,
                );
                block.values()[c.k * shard_len..(c.k + 1) * shard_len].to_vec()
            })
            .collect();
        Ok(ShardedMatrix {
            rows: spec.k,
            cols: spec.n,
            layout: Layout::Weight { row_axis, col_axis },
            locals,
        })
    }

    /// Splits rows over (data, Z) and columns over `col_axis`, replicating
    /// across the remaining tensor axis.
    pub fn scatter_activation(a: &DenseMatrix, grid: &Grid, col_axis: Axis) -> Result<Self> {
        let config = grid.config();
        let row_split = config.g_data * config.g_z;
        if a.rows() % row_split != 0 {
            return Err(Error::Shape(format!(
                "activation rows {} not divisible by g_z*g_data={row_split}",
                a.rows()
            )));
        }
        let g_col = config.extent(col_axis);
        if a.cols() % g_col != 0 {
            return Err(Error::Shape(format!(
                "activation columns {} not divisible by {col_axis}={g_col}",
                a.cols()
            )));
        }
        let rows_per_replica = a.rows() / config.g_data;
        let local_rows = rows_per_replica / config.g_z;
        let local_cols = a.cols() / g_col;

        let locals = (0..grid.total_workers())
            .map(|rank| {
                let c = grid.rank_to_coords(rank);
                let r0 = c.d * rows_per_replica + c.k * local_rows;
                let c0 = c.along(col_axis) * local_cols;
                a.block(r0, local_rows, c0, local_cols).values().to_vec()
            })
            .collect();
        Ok(ShardedMatrix {
            rows: a.rows(),
            cols: a.cols(),
            layout: Layout::Activation { col_axis },
            locals,
        })
    }

    /// Local activation block as a matrix.
    pub fn local_activation(&self, rank: usize, grid: &Grid) -> Result<DenseMatrix> {
        let Layout::Activation { col_axis } = self.layout else {
            return Err(Error::Protocol("local_activation on a weight layout".into()));
        };
        let config = grid.config();
        let local_rows = self.rows / config.g_data / config.g_z;
        let local_cols = self.cols / config.extent(col_axis);
        DenseMatrix::new(local_rows, local_cols, self.locals[rank].clone())
    }

    /// Reassembles the global matrix, checking that replicas agree exactly.
    pub fn gather(&self, grid: &Grid) -> Result<DenseMatrix> {
        self.check_replicas(grid)?;
        let config = grid.config();
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        match self.layout {
            Layout::Activation { col_axis } => {
                let local_rows = self.rows / config.g_data / config.g_z;
                let local_cols = self.cols / config.extent(col_axis);
                let rows_per_replica = self.rows / config.g_data;
                for rank in 0..grid.total_workers() {
                    let c = grid.rank_to_coords(rank);
                    let r0 = c.d * rows_per_replica + c.k * local_rows;
                    let c0 = c.along(col_axis) * local_cols;
                    let local = &self.locals[rank];
                    for r in 0..local_rows {
                        for col in 0..local_cols {
                            out.set(r0 + r, c0 + col, local[r * local_cols + col]);
                        }
                    }
                }
            }
            Layout::Weight { row_axis, col_axis } => {
                let g_row = config.extent(row_axis);
                let g_col = config.extent(col_axis);
                let block_rows = self.rows / g_row;
                let block_cols = self.cols / g_col;
                let shard_len = block_rows * block_cols / config.g_z;
                for rank in 0..grid.total_workers() {
                    let c = grid.rank_to_coords(rank);
                    if c.d != 0 {
                        continue;
                    }
                    let r0 = c.along(row_axis) * block_rows;
                    let c0 = c.along(col_axis) * block_cols;
                    let offset = c.k * shard_len;
                    for (idx, &v) in self.locals[rank].iter().enumerate() {
                        let flat = offset + idx;
                        out.set(r0 + flat / block_cols, c0 + flat % block_cols, v);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Replicas must be bit-identical; divergence means the distributed
    /// arithmetic broke somewhere.
    fn check_replicas(&self, grid: &Grid) -> Result<()> {
        let canonical = |rank: usize| -> usize {
            let mut c = grid.rank_to_coords(rank);
            match self.layout {
                Layout::Activation { col_axis } => {
                    let rep_axis = if col_axis == Axis::X { Axis::Y } else { Axis::X };
                    match rep_axis {
                        Axis::X => c.i = 0,
                        _ => c.j = 0,
                    }
                }
                Layout::Weight { .. } => c.d = 0,
            }
            grid.coords_to_rank(c)
        };
        for rank in 0..grid.total_workers() {
            let canon = canonical(rank);
            if self.locals[rank] != self.locals[canon] {
                return Err(Error::Protocol(format!(
                    "replicas diverged: rank {rank} disagrees with rank {canon}"
                )));
            }
        }
        Ok(())
    }

    /// Re-labels the column axis of an activation whose split axes are both
    /// trivial (extent one), where the two layouts hold identical data.
    fn retag_col_axis(mut self, col_axis: Axis, config: &GridConfig) -> Result<Self> {
        let Layout::Activation { col_axis: current } = self.layout else {
            return Err(Error::Protocol("retag on a weight layout".into()));
        };
        if current == col_axis {
            return Ok(self);
        }
        if config.extent(current) != 1 || config.extent(col_axis) != 1 {
            return Err(Error::Protocol(format!(
                "activation split over {current} cannot feed a layer expecting {col_axis}"
            )));
        }
        self.layout = Layout::Activation { col_axis };
        Ok(self)
    }
}

// ---------------------------------------------------------------------------
// One distributed layer
// ---------------------------------------------------------------------------

/// A fully connected layer living on the grid, with the forward-pass cache
/// the backward pass reuses.
#[derive(Debug, Clone)]
pub struct TpLayer {
    spec: LayerSpec,
    index: usize,
    weight: ShardedMatrix,
    mode: MatmulMode,
    cache: Option<Cache>,
}

#[derive(Debug, Clone)]
struct Cache {
    inputs: Vec<DenseMatrix>,
    gathered_weights: Vec<DenseMatrix>,
}

impl TpLayer {
    /// Shards a global weight. `index` positions the layer in traffic tags.
    pub fn from_global(spec: LayerSpec, index: usize, w: &DenseMatrix, grid: &Grid) -> Result<Self> {
        Ok(TpLayer {
            spec,
            index,
            weight: ShardedMatrix::shard_weight(w, grid, &spec)?,
            mode: MatmulMode::NN,
            cache: None,
        })
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn weight(&self) -> &ShardedMatrix {
        &self.weight
    }

    pub fn set_mode(&mut self, mode: MatmulMode) {
        self.mode = mode;
    }

    /// All-gather weight shards along Z, multiply locally, all-reduce the
    /// partial outputs along the contraction axis. Caches inputs and
    /// gathered weights for backward.
    pub fn forward(
        &mut self,
        input: &ShardedMatrix,
        grid: &Grid,
        net: &mut SimNet,
    ) -> Result<ShardedMatrix> {
        let config = grid.config();
        let row_axis = row_weight_axis(self.spec.transposed);
        let col_axis = col_weight_axis(self.spec.transposed);
        match input.layout() {
            Layout::Activation { col_axis } if col_axis == row_axis => {}
            other => {
                return Err(Error::Protocol(format!(
                    "layer {} expects input columns split over {row_axis}, got {other:?}",
                    self.index
                )))
            }
        }
        if (input.rows(), input.cols()) != (self.spec.m, self.spec.k) {
            return Err(Error::Shape(format!(
                "layer {} expects a {}x{} input, got {}x{}",
                self.index,
                self.spec.m,
                self.spec.k,
                input.rows(),
                input.cols()
            )));
        }

        let (g_row, g_col) = self.spec.tile_extents(config);
        let (block_rows, block_cols) = (self.spec.k / g_row, self.spec.n / g_col);

        // Line one of the layer: reassemble full weight blocks from Z shards.
        let mut gathered: Vec<Option<DenseMatrix>> = vec![None; grid.total_workers()];
        for group in grid.groups(Axis::Z) {
            let shards: Vec<Vec<f64>> =
                group.members.iter().map(|&r| self.weight.local(r).to_vec()).collect();
            let full = net.all_gather(
                CommTag::new(Axis::Z, Phase::Forward, self.index),
                &group,
                &shards,
            )?;
            for (&rank, flat) in group.members.iter().zip(full) {
                gathered[rank] = Some(DenseMatrix::new(block_rows, block_cols, flat)?);
            }
        }
        let gathered: Vec<DenseMatrix> = gathered.into_iter().map(Option::unwrap).collect();

        // Local products, then sum partial outputs along the contraction axis.
        let mut inputs = Vec::with_capacity(grid.total_workers());
        let mut partials = Vec::with_capacity(grid.total_workers());
        for rank in 0..grid.total_workers() {
            let local_in = input.local_activation(rank, grid)?;
            let partial = matmul_with_mode(&local_in, &gathered[rank], self.mode)?;
            partials.push(partial.values().to_vec());
            inputs.push(local_in);
        }
        let mut outputs: Vec<Vec<f64>> = vec![Vec::new(); grid.total_workers()];
        for group in grid.groups(row_axis) {
            let ins: Vec<Vec<f64>> =
                group.members.iter().map(|&r| partials[r].clone()).collect();
            let summed = net.all_reduce(
                CommTag::new(row_axis, Phase::Forward, self.index),
                &group,
                &ins,
            )?;
            for (&rank, v) in group.members.iter().zip(summed) {
                outputs[rank] = v;
            }
        }

        self.cache = Some(Cache { inputs, gathered_weights: gathered });
        Ok(ShardedMatrix {
            rows: self.spec.m,
            cols: self.spec.n,
            layout: Layout::Activation { col_axis },
            locals: outputs,
        })
    }

    /// Consumes the forward cache. Returns the input gradient (distributed
    /// like the input) and the weight gradient (distributed like the
    /// weight, still per-replica: data-axis summation happens at step end).
    pub fn backward(
        &mut self,
        grad_out: &ShardedMatrix,
        grid: &Grid,
        net: &mut SimNet,
    ) -> Result<(ShardedMatrix, ShardedMatrix)> {
        let cache = self.cache.take().ok_or_else(|| {
            Error::State(format!("layer {}: backward called before forward", self.index))
        })?;
        let row_axis = row_weight_axis(self.spec.transposed);
        let col_axis = col_weight_axis(self.spec.transposed);
        match grad_out.layout() {
            Layout::Activation { col_axis: c } if c == col_axis => {}
            other => {
                return Err(Error::Protocol(format!(
                    "layer {} expects output-gradient columns split over {col_axis}, got {other:?}",
                    self.index
                )))
            }
        }
        if (grad_out.rows(), grad_out.cols()) != (self.spec.m, self.spec.n) {
            return Err(Error::Shape(format!(
                "layer {} expects a {}x{} output gradient, got {}x{}",
                self.index,
                self.spec.m,
                self.spec.n,
                grad_out.rows(),
                grad_out.cols()
            )));
        }

        let total = grid.total_workers();
        // Partial input gradients: dO * W^T, summed along the column axis.
        let mut grad_in_partials = Vec::with_capacity(total);
        // Full-block weight gradients: I^T * dO, scattered back along Z.
        let mut grad_w_blocks = Vec::with_capacity(total);
        for rank in 0..total {
            let d_out = grad_out.local_activation(rank, grid)?;
            let w = &cache.gathered_weights[rank];
            let input = &cache.inputs[rank];
            grad_in_partials.push(d_out.matmul_nt(w)?.values().to_vec());
            grad_w_blocks.push(input.matmul_tn(&d_out)?.values().to_vec());
        }

        let mut grad_in = vec![Vec::new(); total];
        for group in grid.groups(col_axis) {
            let ins: Vec<Vec<f64>> =
                group.members.iter().map(|&r| grad_in_partials[r].clone()).collect();
            let summed = net.all_reduce(
                CommTag::new(col_axis, Phase::Backward, self.index),
                &group,
                &ins,
            )?;
            for (&rank, v) in group.members.iter().zip(summed) {
                grad_in[rank] = v;
            }
        }

        let mut grad_w = vec![Vec::new(); total];
        for group in grid.groups(Axis::Z) {
            let ins: Vec<Vec<f64>> =
                group.members.iter().map(|&r| grad_w_blocks[r].clone()).collect();
            let shards = net.reduce_scatter(
                CommTag::new(Axis::Z, Phase::Backward, self.index),
                &group,
                &ins,
            )?;
            for (&rank, v) in group.members.iter().zip(shards) {
                grad_w[rank] = v;
            }
        }

        Ok((
            ShardedMatrix {
                rows: self.spec.m,
                cols: self.spec.k,
                layout: Layout::Activation { col_axis: row_axis },
                locals: grad_in,
            },
            ShardedMatrix {
                rows: self.spec.k,
                cols: self.spec.n,
                layout: Layout::Weight { row_axis, col_axis },
                locals: grad_w,
            },
        ))
    }
}

// ---------------------------------------------------------------------------
// A network and one training step
// ---------------------------------------------------------------------------

/// A stack of distributed layers whose shapes chain.
#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<TpLayer>,
}

/// Everything one training step produces.
#[derive(Debug)]
pub struct StepOutput {
    /// Mean of the squared entries of the global output.
    pub loss: f64,
    pub output: ShardedMatrix,
    /// Per-layer weight gradients, summed across data replicas.
    pub weight_grads: Vec<ShardedMatrix>,
    pub input_grad: ShardedMatrix,
}

impl Network {
    /// Builds from explicit global weights.
    pub fn from_weights(
        specs: &[LayerSpec],
        weights: &[DenseMatrix],
        grid: &Grid,
    ) -> Result<Network> {
        if specs.len() != weights.len() {
            return Err(Error::Config(format!(
                "{} layer specs but {} weights",
                specs.len(),
                weights.len()
            )));
        }
        validate_chain(specs, grid.config())?;
        let layers = specs
            .iter()
            .zip(weights)
            .enumerate()
            .map(|(idx, (spec, w))| TpLayer::from_global(*spec, idx, w, grid))
            .collect::<Result<Vec<_>>>()?;
        Ok(Network { layers })
    }

    /// Builds with weights drawn uniformly from [-1, 1), in layer order from
    /// one seeded stream.
    pub fn build_seeded(specs: &[LayerSpec], grid: &Grid, seed: u64) -> Result<Network> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights: Vec<DenseMatrix> = specs
            .iter()
            .map(|s| DenseMatrix::random(s.k, s.n, &mut rng))
            .collect();
        Network::from_weights(specs, &weights, grid)
    }

    pub fn layers(&self) -> &[TpLayer] {
        &self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    /// Reassembled global weight of layer `index`.
    pub fn weight_global(&self, index: usize, grid: &Grid) -> Result<DenseMatrix> {
        self.layers[index].weight().gather(grid)
    }

    pub fn set_modes(&mut self, mode: MatmulMode) {
        for l in &mut self.layers {
            l.set_mode(mode);
        }
    }

    /// One full training step: scatter the batch, forward, mean-square loss,
    /// backward, and the data-axis gradient sync.
    pub fn step(&mut self, batch: &DenseMatrix, grid: &Grid, net: &mut SimNet) -> Result<StepOutput> {
        let first = self.layers.first().ok_or_else(|| Error::Config("empty network".into()))?;
        if (batch.rows(), batch.cols()) != (first.spec.m, first.spec.k) {
            return Err(Error::Shape(format!(
                "batch is {}x{}, network expects {}x{}",
                batch.rows(),
                batch.cols(),
                first.spec.m,
                first.spec.k
            )));
        }
        let config = *grid.config();

        // The batch is scattered once from a designated root; slicing is the
        // deterministic stand-in and moves no modeled bytes.
        let mut act = ShardedMatrix::scatter_activation(
            batch,
            grid,
            row_weight_axis(first.spec.transposed),
        )?;
        for layer in &mut self.layers {
            act = act.retag_col_axis(row_weight_axis(layer.spec.transposed), &config)?;
            act = layer.forward(&act, grid, net)?;
        }

        let (loss, mut grad) = loss_and_grad(&act, grid)?;
        let mut weight_grads: Vec<Option<ShardedMatrix>> = vec![None; self.layers.len()];
        for (idx, layer) in self.layers.iter_mut().enumerate().rev() {
            grad = grad.retag_col_axis(col_weight_axis(layer.spec.transposed), &config)?;
            let (g_in, g_w) = layer.backward(&grad, grid, net)?;
            weight_grads[idx] = Some(g_w);
            grad = g_in;
        }
        let mut weight_grads: Vec<ShardedMatrix> =
            weight_grads.into_iter().map(Option::unwrap).collect();

        // Data-parallel sync: sum weight-gradient shards across replicas.
        for (idx, g_w) in weight_grads.iter_mut().enumerate() {
            for group in grid.groups(Axis::Data) {
                let ins: Vec<Vec<f64>> =
                    group.members.iter().map(|&r| g_w.locals[r].clone()).collect();
                let summed = net.all_reduce(
                    CommTag::new(Axis::Data, Phase::DataSync, idx),
                    &group,
                    &ins,
                )?;
                for (&rank, v) in group.members.iter().zip(summed) {
                    g_w.locals[rank] = v;
                }
            }
        }

        Ok(StepOutput { loss, output: act, weight_grads, input_grad: grad })
    }
}

/// Chain validation: shapes must connect and each layer's expected input
/// split must match (or be trivially relabelable from) the previous output.
fn validate_chain(specs: &[LayerSpec], config: &GridConfig) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::Config("network needs at least one layer".into()));
    }
    for spec in specs {
        spec.validate(config)?;
    }
    for pair in specs.windows(2) {
        if pair[0].n != pair[1].k {
            return Err(Error::Shape(format!(
                "layer output width {} feeds layer input width {}",
                pair[0].n, pair[1].k
            )));
        }
        if pair[0].m != pair[1].m {
            return Err(Error::Shape("layers disagree on batch rows".into()));
        }
        let out_axis = col_weight_axis(pair[0].transposed);
        let in_axis = row_weight_axis(pair[1].transposed);
        if out_axis != in_axis && (config.extent(out_axis) != 1 || config.extent(in_axis) != 1) {
            return Err(Error::Config(format!(
                "layer split over {out_axis} feeds layer expecting {in_axis}; \
                 alternate transposed flags"
            )));
        }
    }
    Ok(())
}

/// Mean-square loss over the global output and the matching per-rank output
/// gradient. No communication: every rank already holds what it needs.
fn loss_and_grad(output: &ShardedMatrix, grid: &Grid) -> Result<(f64, ShardedMatrix)> {
    let Layout::Activation { col_axis } = output.layout() else {
        return Err(Error::Protocol("loss expects an activation".into()));
    };
    let rep_axis = if col_axis == Axis::X { Axis::Y } else { Axis::X };
    let mut sum_sq = 0.0;
    for rank in 0..grid.total_workers() {
        if grid.rank_to_coords(rank).along(rep_axis) != 0 {
            continue;
        }
        sum_sq += output.local(rank).iter().map(|v| v * v).sum::<f64>();
    }
    let denom = (output.rows() * output.cols()) as f64;
    let loss = sum_sq / denom;
    let scale = 2.0 / denom;
    let locals = (0..grid.total_workers())
        .map(|rank| output.local(rank).iter().map(|v| v * scale).collect())
        .collect();
    Ok((
        loss,
        ShardedMatrix { rows: output.rows(), cols: output.cols(), layout: output.layout(), locals },
    ))
}

// ---------------------------------------------------------------------------
// Serial reference implementation
// ---------------------------------------------------------------------------

/// Plain single-process forward, loss, and backward with hand-rolled loops.
/// Deliberately independent of the distributed path so tests can hold the
/// two against each other.
pub mod oracle {
    use super::*;

    /// `a * b` with its own loops; no shared kernel with the layer code.
    fn mm(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
        let (m, k, n) = (a.rows(), a.cols(), b.cols());
        assert_eq!(k, b.rows(), "oracle matmul shapes");
        let mut out = DenseMatrix::zeros(m, n);
        for r in 0..m {
            for c in 0..n {
                let mut acc = 0.0;
                for t in 0..k {
                    acc += a.get(r, t) * b.get(t, c);
                }
                out.set(r, c, acc);
            }
        }
        out
    }

    fn mm_at_b(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
        let (k, m, n) = (a.rows(), a.cols(), b.cols());
        assert_eq!(k, b.rows(), "oracle matmul shapes");
        let mut out = DenseMatrix::zeros(m, n);
        for r in 0..m {
            for c in 0..n {
                let mut acc = 0.0;
                for t in 0..k {
                    acc += a.get(t, r) * b.get(t, c);
                }
                out.set(r, c, acc);
            }
        }
        out
    }

    fn mm_a_bt(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
        let (m, k, n) = (a.rows(), a.cols(), b.rows());
        assert_eq!(k, b.cols(), "oracle matmul shapes");
        let mut out = DenseMatrix::zeros(m, n);
        for r in 0..m {
            for c in 0..n {
                let mut acc = 0.0;
                for t in 0..k {
                    acc += a.get(r, t) * b.get(c, t);
                }
                out.set(r, c, acc);
            }
        }
        out
    }

    /// Activations after every layer.
    pub fn forward(weights: &[DenseMatrix], batch: &DenseMatrix) -> Vec<DenseMatrix> {
        let mut acts = Vec::with_capacity(weights.len());
        let mut cur = batch.clone();
        for w in weights {
            cur = mm(&cur, w);
            acts.push(cur.clone());
        }
        acts
    }

    /// Mean of squared entries.
    pub fn loss_of(output: &DenseMatrix) -> f64 {
        let n = (output.rows() * output.cols()) as f64;
        output.values().iter().map(|v| v * v).sum::<f64>() / n
    }

    pub struct Gradients {
        pub loss: f64,
        pub outputs: Vec<DenseMatrix>,
        pub weight_grads: Vec<DenseMatrix>,
        pub input_grad: DenseMatrix,
    }

    /// Full-batch loss and exact gradients.
    pub fn backward(weights: &[DenseMatrix], batch: &DenseMatrix) -> Gradients {
        let outputs = forward(weights, batch);
        let last = outputs.last().expect("at least one layer");
        let loss = loss_of(last);
        let mut grad = last.scale(2.0 / (last.rows() * last.cols()) as f64);
        let mut weight_grads = vec![DenseMatrix::zeros(0, 0); weights.len()];
        for idx in (0..weights.len()).rev() {
            let input = if idx == 0 { batch } else { &outputs[idx - 1] };
            weight_grads[idx] = mm_at_b(input, &grad);
            grad = mm_a_bt(&grad, &weights[idx]);
        }
        Gradients { loss, outputs, weight_grads, input_grad: grad }
    }

    /// Central finite differences of the loss with respect to every weight
    /// entry.
    pub fn finite_difference_weight_grads(
        weights: &[DenseMatrix],
        batch: &DenseMatrix,
        h: f64,
    ) -> Vec<DenseMatrix> {
        let mut grads = Vec::with_capacity(weights.len());
        for idx in 0..weights.len() {
            let mut g = DenseMatrix::zeros(weights[idx].rows(), weights[idx].cols());
            for r in 0..weights[idx].rows() {
                for c in 0..weights[idx].cols() {
                    let mut perturbed: Vec<DenseMatrix> = weights.to_vec();
                    perturbed[idx].set(r, c, weights[idx].get(r, c) + h);
                    let up = loss_of(forward(&perturbed, batch).last().unwrap());
                    perturbed[idx].set(r, c, weights[idx].get(r, c) - h);
                    let down = loss_of(forward(&perturbed, batch).last().unwrap());
                    g.set(r, c, (up - down) / (2.0 * h));
                }
            }
            grads.push(g);
        }
        grads
    }
}

// ---------------------------------------------------------------------------
// Matmul-mode autotuner
// ---------------------------------------------------------------------------

/// Source of per-mode timings. The default wall-clock timer really runs the
/// kernels; tests inject synthetic timers.
pub trait ModeTimer {
    /// Seconds to compute an `m x k` by `k x n` product in `mode`.
    fn time(&mut self, mode: MatmulMode, shape: (usize, usize, usize)) -> f64;
}

/// Times real kernel executions on seeded operands. Operand preparation and
/// layout transposes happen outside the timed region.
pub struct WallClockTimer {
    seed: u64,
}

impl WallClockTimer {
    pub fn new(seed: u64) -> Self {
        WallClockTimer { seed }
    }
}

impl ModeTimer for WallClockTimer {
    fn time(&mut self, mode: MatmulMode, shape: (usize, usize, usize)) -> f64 {
        let (m, k, n) = shape;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let a = DenseMatrix::random(m, k, &mut rng);
        let b = DenseMatrix::random(k, n, &mut rng);
        let (lhs, rhs) = match mode {
            MatmulMode::NN => (a.clone(), b.clone()),
            MatmulMode::NT => (a.clone(), b.transpose()),
            MatmulMode::TN => (a.transpose(), b.clone()),
        };
        let start = std::time::Instant::now();
        let out = match mode {
            MatmulMode::NN => lhs.matmul_nn(&rhs),
            MatmulMode::NT => lhs.matmul_nt(&rhs),
            MatmulMode::TN => lhs.matmul_tn(&rhs),
        };
        let elapsed = start.elapsed().as_secs_f64();
        std::hint::black_box(&out);
        elapsed
    }
}

/// Tuning result: the winning mode and the median seconds per mode in
/// NN, NT, TN order.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct TuneOutcome {
    pub mode: MatmulMode,
    pub median_seconds: [f64; 3],
}

/// Times each kernel `trials` times, takes the per-mode median, and returns
/// the argmin; ties resolve NN before NT before TN. Also cross-checks that
/// all three kernels agree numerically on a seeded instance.
pub fn tune_matmul_mode(
    shape: (usize, usize, usize),
    timer: &mut dyn ModeTimer,
    trials: usize,
) -> Result<TuneOutcome> {
    let (m, k, n) = shape;
    if m == 0 || k == 0 || n == 0 {
        return Err(Error::Config(format!("tune shape has a zero dimension: {shape:?}")));
    }
    if trials == 0 {
        return Err(Error::Config("tune needs at least one trial".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0x7ea1);
    let a = DenseMatrix::random(m.min(16), k.min(16), &mut rng);
    let b = DenseMatrix::random(k.min(16), n.min(16), &mut rng);
    let reference = matmul_with_mode(&a, &b, MatmulMode::NN)?;
    for mode in [MatmulMode::NT, MatmulMode::TN] {
        let got = matmul_with_mode(&a, &b, mode)?;
        let scale = reference
            .values()
            .iter()
            .map(|v| v.abs())
            .fold(1.0f64, f64::max);
        if got.max_abs_diff(&reference) > 1e-12 * scale {
            return Err(Error::Protocol(format!("matmul mode {mode} disagrees with nn")));
        }
    }

    let mut medians = [0.0f64; 3];
    for (slot, mode) in MatmulMode::ALL.into_iter().enumerate() {
        let mut times: Vec<f64> = (0..trials).map(|_| timer.time(mode, shape)).collect();
        times.sort_by(|x, y| x.partial_cmp(y).expect("timings are finite"));
        medians[slot] = if trials % 2 == 1 {
            times[trials / 2]
        } else {
            0.5 * (times[trials / 2 - 1] + times[trials / 2])
        };
    }

    let mut best = 0;
    for slot in 1..3 {
        if medians[slot] < medians[best] {
            best = slot;
        }
    }
    Ok(TuneOutcome { mode: MatmulMode::ALL[best], median_seconds: medians })
}

// ---------------------------------------------------------------------------
// Step-level measured communication times
// ---------------------------------------------------------------------------

/// Event-simulated seconds for each collective of one layer's step, with
/// all same-axis groups of the whole grid running concurrently.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct StepCommTimes {
    pub ag_z: f64,
    pub rs_z: f64,
    pub ar_fwd: f64,
    pub ar_bwd: f64,
    pub ar_data: f64,
}

impl StepCommTimes {
    pub fn total(&self) -> f64 {
        self.ag_z + self.rs_z + self.ar_fwd + self.ar_bwd + self.ar_data
    }
}

/// Runs the timing engine over the collectives of one training step,
/// layer by layer. This is the execution-side route: ring plans, directed
/// node-boundary links, and bandwidth sharing, with no closed-form model.
pub fn measure_step_comm(
    specs: &[LayerSpec],
    grid: &Grid,
    cluster: &crate::simnet::ClusterSpec,
    bytes_per_element: usize,
) -> Result<Vec<StepCommTimes>> {
    use crate::simnet::{makespan, ring_order, CollectiveKind, Transfer};

    let config = grid.config();
    let axis_time = |axis: Axis, kind: CollectiveKind, payload_elements: usize| -> Result<f64> {
        let payload_bytes = (payload_elements * bytes_per_element) as u64;
        let transfers: Vec<Transfer> = grid
            .groups(axis)
            .iter()
            .map(|g| Transfer {
                plan: ring_order(g, grid.node_map()),
                kind,
                payload_bytes,
            })
            .collect();
        makespan(&transfers, cluster)
    };

    specs
        .iter()
        .map(|spec| {
            spec.validate(config)?;
            let p = spec.collective_payloads(config);
            Ok(StepCommTimes {
                ag_z: axis_time(Axis::Z, CollectiveKind::AllGather, p.weight_block)?,
                rs_z: axis_time(Axis::Z, CollectiveKind::ReduceScatter, p.weight_block)?,
                ar_fwd: axis_time(
                    row_weight_axis(spec.transposed),
                    CollectiveKind::AllReduce,
                    p.fwd_output,
                )?,
                ar_bwd: axis_time(
                    col_weight_axis(spec.transposed),
                    CollectiveKind::AllReduce,
                    p.bwd_input,
                )?,
                ar_data: axis_time(Axis::Data, CollectiveKind::AllReduce, p.weight_shard)?,
            })
        })
        .collect()
}
