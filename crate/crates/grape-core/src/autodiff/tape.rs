//! The tape: tensors, recorded primitives, and the backward pass.

use ndarray::{s, Array2, Axis};
use serde::Serialize;

use crate::error::{GrapeError, Result};

pub type TensorId = usize;

/// Permutation-invariant reduction used when a node pools its incoming
/// messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    Mean,
    Sum,
    Max,
}

impl Aggregator {
    pub fn name(&self) -> &'static str {
        match self {
            Aggregator::Mean => "mean",
            Aggregator::Sum => "sum",
            Aggregator::Max => "max",
        }
    }
}

impl std::str::FromStr for Aggregator {
    type Err = GrapeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Aggregator::Mean),
            "sum" => Ok(Aggregator::Sum),
            "max" => Ok(Aggregator::Max),
            other => Err(GrapeError::InvalidArgument(format!(
                "unknown aggregator {other:?} (expected mean, sum, or max)"
            ))),
        }
    }
}

/// A dense matrix on the tape. Row vectors are `1 x c`, scalars `1 x 1`.
#[derive(Debug, Clone)]
pub struct Tensor {
    values: Array2<f64>,
    requires_grad: bool,
    grad: Option<Array2<f64>>,
}

impl Tensor {
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&Array2<f64>> {
        self.grad.as_ref()
    }
}

/// Index bookkeeping for one segment-aggregate application. `argmax` holds,
/// per (segment, column), the input row that won a max reduction; empty
/// segments keep `usize::MAX` and produce zero rows.
#[derive(Debug)]
struct SegmentCtx {
    segments: Vec<usize>,
    counts: Vec<usize>,
    mode: Aggregator,
    argmax: Option<Array2<usize>>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(TensorId, TensorId),
    /// `x + b` with `b` a `1 x c` row added to every row of `x`.
    AddBias(TensorId, TensorId),
    Add(TensorId, TensorId),
    Scale(TensorId, f64),
    ConcatCols(Vec<TensorId>),
    Relu(TensorId),
    GatherRows(TensorId, Vec<usize>),
    SliceCols(TensorId, usize),
    Reshape(TensorId),
    SegmentAgg(TensorId, SegmentCtx),
    /// Entry-wise choice between the input and a constant baseline.
    MaskCombine(TensorId, Vec<bool>),
    MseLoss(TensorId, TensorId),
    SoftmaxCrossEntropy {
        logits: TensorId,
        targets: Vec<usize>,
        softmax: Array2<f64>,
    },
}

/// Records primitive applications in topological order; `backward` walks
/// them once in reverse.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<(Tensor, Op)>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn tensor(&self, id: TensorId) -> &Tensor {
        &self.nodes[id].0
    }

    pub fn value(&self, id: TensorId) -> &Array2<f64> {
        &self.nodes[id].0.values
    }

    pub fn scalar(&self, id: TensorId) -> f64 {
        self.nodes[id].0.values[(0, 0)]
    }

    pub fn grad(&self, id: TensorId) -> Option<&Array2<f64>> {
        self.nodes[id].0.grad.as_ref()
    }

    pub fn leaf(&mut self, values: Array2<f64>, requires_grad: bool) -> TensorId {
        self.push(values, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, values: Array2<f64>) -> TensorId {
        self.leaf(values, false)
    }

    fn push(&mut self, values: Array2<f64>, requires_grad: bool, op: Op) -> TensorId {
        self.nodes.push((
            Tensor {
                values,
                requires_grad,
                grad: None,
            },
            op,
        ));
        self.nodes.len() - 1
    }

    fn any_requires_grad(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|&id| self.nodes[id].0.requires_grad)
    }

    /// `a @ b`; backward `dA = dC @ B^T`, `dB = A^T @ dC`.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ar, ac) = self.tensor(a).shape();
        let (br, bc) = self.tensor(b).shape();
        if ac != br {
            return Err(GrapeError::Shape(format!(
                "matmul {ar}x{ac} @ {br}x{bc}: inner dimensions differ"
            )));
        }
        let values = self.value(a).dot(self.value(b));
        let rg = self.any_requires_grad(&[a, b]);
        Ok(self.push(values, rg, Op::MatMul(a, b)))
    }

    /// Adds the `1 x c` row `bias` to every row of `x`.
    pub fn add_bias(&mut self, x: TensorId, bias: TensorId) -> Result<TensorId> {
        let (_, xc) = self.tensor(x).shape();
        let (br, bc) = self.tensor(bias).shape();
        if br != 1 || bc != xc {
            return Err(GrapeError::Shape(format!(
                "bias must be 1x{xc}, got {br}x{bc}"
            )));
        }
        let values = self.value(x) + self.value(bias);
        let rg = self.any_requires_grad(&[x, bias]);
        Ok(self.push(values, rg, Op::AddBias(x, bias)))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.tensor(a).shape() != self.tensor(b).shape() {
            return Err(GrapeError::Shape(format!(
                "add {:?} + {:?}",
                self.tensor(a).shape(),
                self.tensor(b).shape()
            )));
        }
        let values = self.value(a) + self.value(b);
        let rg = self.any_requires_grad(&[a, b]);
        Ok(self.push(values, rg, Op::Add(a, b)))
    }

    pub fn scale(&mut self, x: TensorId, factor: f64) -> TensorId {
        let values = self.value(x) * factor;
        let rg = self.tensor(x).requires_grad;
        self.push(values, rg, Op::Scale(x, factor))
    }

    /// Column-wise concatenation; inputs must agree on row count. Zero-width
    /// inputs are legal and contribute nothing.
    pub fn concat_cols(&mut self, inputs: &[TensorId]) -> Result<TensorId> {
        if inputs.is_empty() {
            return Err(GrapeError::InvalidArgument(
                "concat_cols needs at least one input".into(),
            ));
        }
        let rows = self.tensor(inputs[0]).shape().0;
        let mut total = 0;
        for &id in inputs {
            let (r, c) = self.tensor(id).shape();
            if r != rows {
                return Err(GrapeError::Shape(format!(
                    "concat_cols row mismatch: {rows} vs {r}"
                )));
            }
            total += c;
        }
        let mut values = Array2::zeros((rows, total));
        let mut offset = 0;
        for &id in inputs {
            let c = self.tensor(id).shape().1;
            values
                .slice_mut(s![.., offset..offset + c])
                .assign(self.value(id));
            offset += c;
        }
        let rg = self.any_requires_grad(inputs);
        Ok(self.push(values, rg, Op::ConcatCols(inputs.to_vec())))
    }

    /// Elementwise `max(0, x)`; the subgradient at exactly 0 is 0.
    pub fn relu(&mut self, x: TensorId) -> TensorId {
        let values = self.value(x).mapv(|v| v.max(0.0));
        let rg = self.tensor(x).requires_grad;
        self.push(values, rg, Op::Relu(x))
    }

    /// Copies the listed rows of `x` (repeats allowed); backward scatter-adds.
    pub fn gather_rows(&mut self, x: TensorId, rows: &[usize]) -> Result<TensorId> {
        let (xr, xc) = self.tensor(x).shape();
        for &r in rows {
            if r >= xr {
                return Err(GrapeError::InvalidArgument(format!(
                    "gather_rows index {r} out of range for {xr} rows"
                )));
            }
        }
        let src = self.value(x);
        let mut values = Array2::zeros((rows.len(), xc));
        for (out_r, &in_r) in rows.iter().enumerate() {
            values.row_mut(out_r).assign(&src.row(in_r));
        }
        let rg = self.tensor(x).requires_grad;
        Ok(self.push(values, rg, Op::GatherRows(x, rows.to_vec())))
    }

    pub fn slice_cols(&mut self, x: TensorId, start: usize, len: usize) -> Result<TensorId> {
        let (_, xc) = self.tensor(x).shape();
        if start + len > xc {
            return Err(GrapeError::Shape(format!(
                "slice_cols {start}..{} out of range for {xc} columns",
                start + len
            )));
        }
        let values = self.value(x).slice(s![.., start..start + len]).to_owned();
        let rg = self.tensor(x).requires_grad;
        Ok(self.push(values, rg, Op::SliceCols(x, start)))
    }

    /// Row-major reshape to `rows x cols` (element count preserved).
    pub fn reshape(&mut self, x: TensorId, rows: usize, cols: usize) -> Result<TensorId> {
        let (xr, xc) = self.tensor(x).shape();
        if xr * xc != rows * cols {
            return Err(GrapeError::Shape(format!(
                "reshape {xr}x{xc} to {rows}x{cols}"
            )));
        }
        let flat: Vec<f64> = self.value(x).iter().copied().collect();
        let values = Array2::from_shape_vec((rows, cols), flat).expect("checked size");
        let rg = self.tensor(x).requires_grad;
        Ok(self.push(values, rg, Op::Reshape(x)))
    }

    /// Per-segment reduction of rows. `segments[r]` assigns input row `r` to
    /// an output row; empty segments produce zero rows. Mean divides by the
    /// segment size; max routes its gradient to the first (lowest-index)
    /// argmax row.
    pub fn segment_aggregate(
        &mut self,
        x: TensorId,
        segments: &[usize],
        n_segments: usize,
        mode: Aggregator,
    ) -> Result<TensorId> {
        let (xr, xc) = self.tensor(x).shape();
        if segments.len() != xr {
            return Err(GrapeError::Shape(format!(
                "{} segment ids for {xr} rows",
                segments.len()
            )));
        }
        for &t in segments {
            if t >= n_segments {
                return Err(GrapeError::InvalidArgument(format!(
                    "segment id {t} out of range for {n_segments} segments"
                )));
            }
        }
        let src = self.value(x);
        let mut counts = vec![0usize; n_segments];
        for &t in segments {
            counts[t] += 1;
        }
        let mut values = Array2::zeros((n_segments, xc));
        let mut argmax = None;
        match mode {
            Aggregator::Sum | Aggregator::Mean => {
                for (r, &t) in segments.iter().enumerate() {
                    let row = src.row(r);
                    let mut acc = values.row_mut(t);
                    acc += &row;
                }
                if mode == Aggregator::Mean {
                    for t in 0..n_segments {
                        if counts[t] > 0 {
                            let inv = 1.0 / counts[t] as f64;
                            values.row_mut(t).mapv_inplace(|v| v * inv);
                        }
                    }
                }
            }
            Aggregator::Max => {
                let mut best = Array2::from_elem((n_segments, xc), f64::NEG_INFINITY);
                let mut winners = Array2::from_elem((n_segments, xc), usize::MAX);
                for (r, &t) in segments.iter().enumerate() {
                    for c in 0..xc {
                        let v = src[(r, c)];
                        if v > best[(t, c)] {
                            best[(t, c)] = v;
                            winners[(t, c)] = r;
                        }
                    }
                }
                for t in 0..n_segments {
                    for c in 0..xc {
                        values[(t, c)] = if counts[t] == 0 { 0.0 } else { best[(t, c)] };
                    }
                }
                argmax = Some(winners);
            }
        }
        let rg = self.tensor(x).requires_grad;
        let ctx = SegmentCtx {
            segments: segments.to_vec(),
            counts,
            mode,
            argmax,
        };
        Ok(self.push(values, rg, Op::SegmentAgg(x, ctx)))
    }

    /// Entry-wise: output takes `pred` where `use_pred` is set and the
    /// constant `baseline` elsewhere. Gradient flows only into the `pred`
    /// entries that were used.
    pub fn mask_combine(
        &mut self,
        pred: TensorId,
        baseline: &Array2<f64>,
        use_pred: &[bool],
    ) -> Result<TensorId> {
        let shape = self.tensor(pred).shape();
        if baseline.dim() != shape || use_pred.len() != shape.0 * shape.1 {
            return Err(GrapeError::Shape(format!(
                "mask_combine: pred {shape:?}, baseline {:?}, flags {}",
                baseline.dim(),
                use_pred.len()
            )));
        }
        let mut values = baseline.clone();
        let src = self.value(pred);
        for i in 0..shape.0 {
            for j in 0..shape.1 {
                if use_pred[i * shape.1 + j] {
                    values[(i, j)] = src[(i, j)];
                }
            }
        }
        let rg = self.tensor(pred).requires_grad;
        Ok(self.push(values, rg, Op::MaskCombine(pred, use_pred.to_vec())))
    }

    /// Mean squared difference, as a `1 x 1` tensor.
    pub fn mse_loss(&mut self, pred: TensorId, target: TensorId) -> Result<TensorId> {
        let shape = self.tensor(pred).shape();
        if shape != self.tensor(target).shape() {
            return Err(GrapeError::Shape(format!(
                "mse_loss shapes {:?} vs {:?}",
                shape,
                self.tensor(target).shape()
            )));
        }
        if shape.0 * shape.1 == 0 {
            return Err(GrapeError::InvalidArgument("mse_loss over empty input".into()));
        }
        let diff = self.value(pred) - self.value(target);
        let n = (shape.0 * shape.1) as f64;
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
        let rg = self.any_requires_grad(&[pred, target]);
        Ok(self.push(
            Array2::from_elem((1, 1), loss),
            rg,
            Op::MseLoss(pred, target),
        ))
    }

    /// Mean over rows of `-log softmax(logits)[target]`, stabilized by
    /// row-max subtraction.
    pub fn softmax_cross_entropy(&mut self, logits: TensorId, targets: &[usize]) -> Result<TensorId> {
        let (n, k) = self.tensor(logits).shape();
        if k < 2 {
            return Err(GrapeError::InvalidArgument(format!(
                "softmax_cross_entropy needs >= 2 classes, got {k}"
            )));
        }
        if targets.len() != n {
            return Err(GrapeError::Shape(format!(
                "{} targets for {n} logit rows",
                targets.len()
            )));
        }
        for &t in targets {
            if t >= k {
                return Err(GrapeError::InvalidArgument(format!(
                    "class id {t} out of range for {k} classes"
                )));
            }
        }
        let src = self.value(logits);
        let mut softmax = Array2::zeros((n, k));
        let mut loss = 0.0;
        for i in 0..n {
            let row = src.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for j in 0..k {
                let e = (row[j] - max).exp();
                softmax[(i, j)] = e;
                denom += e;
            }
            for j in 0..k {
                softmax[(i, j)] /= denom;
            }
            loss += denom.ln() - (row[targets[i]] - max);
        }
        loss /= n as f64;
        let rg = self.tensor(logits).requires_grad;
        Ok(self.push(
            Array2::from_elem((1, 1), loss),
            rg,
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
                softmax,
            },
        ))
    }

    /// Debug view of the recorded computation: one entry per node with the
    /// producing op and output shape.
    pub fn debug_json(&self) -> String {
        let entries: Vec<serde_json::Value> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(id, (tensor, op))| {
                let op_name = match op {
                    Op::Leaf => "leaf",
                    Op::MatMul(..) => "matmul",
                    Op::AddBias(..) => "add_bias",
                    Op::Add(..) => "add",
                    Op::Scale(..) => "scale",
                    Op::ConcatCols(..) => "concat_cols",
                    Op::Relu(..) => "relu",
                    Op::GatherRows(..) => "gather_rows",
                    Op::SliceCols(..) => "slice_cols",
                    Op::Reshape(..) => "reshape",
                    Op::SegmentAgg(..) => "segment_aggregate",
                    Op::MaskCombine(..) => "mask_combine",
                    Op::MseLoss(..) => "mse_loss",
                    Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
                };
                serde_json::json!({
                    "id": id,
                    "op": op_name,
                    "shape": tensor.shape(),
                    "requires_grad": tensor.requires_grad,
                })
            })
            .collect();
        serde_json::Value::Array(entries).to_string()
    }

    /// Runs the reverse pass from a `1 x 1` loss node. Gradients accumulate
    /// (a tensor consumed twice receives the sum of both contributions) and
    /// are stored on every tensor with `requires_grad`.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.tensor(loss).shape() != (1, 1) {
            return Err(GrapeError::Shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.tensor(loss).shape()
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; n];
        grads[loss] = Some(Array2::from_elem((1, 1), 1.0));

        for id in (0..=loss).rev() {
            if !self.nodes[id].0.requires_grad {
                continue;
            }
            let Some(out_grad) = grads[id].take() else {
                continue;
            };
            self.apply_backward(id, &out_grad, &mut grads);
            self.nodes[id].0.grad = Some(match self.nodes[id].0.grad.take() {
                Some(existing) => existing + out_grad,
                None => out_grad,
            });
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Array2<f64>>], id: TensorId, delta: Array2<f64>) {
        if !self.nodes[id].0.requires_grad {
            return;
        }
        match &mut grads[id] {
            Some(g) => *g += &delta,
            slot @ None => *slot = Some(delta),
        }
    }

    fn apply_backward(
        &self,
        id: TensorId,
        out_grad: &Array2<f64>,
        grads: &mut Vec<Option<Array2<f64>>>,
    ) {
        match &self.nodes[id].1 {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                if self.nodes[a].0.requires_grad {
                    let da = out_grad.dot(&self.value(b).t());
                    self.accumulate(grads, a, da);
                }
                if self.nodes[b].0.requires_grad {
                    let db = self.value(a).t().dot(out_grad);
                    self.accumulate(grads, b, db);
                }
            }
            Op::AddBias(x, bias) => {
                let (x, bias) = (*x, *bias);
                if self.nodes[x].0.requires_grad {
                    self.accumulate(grads, x, out_grad.clone());
                }
                if self.nodes[bias].0.requires_grad {
                    let db = out_grad.sum_axis(Axis(0)).insert_axis(Axis(0));
                    self.accumulate(grads, bias, db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, out_grad.clone());
                self.accumulate(grads, *b, out_grad.clone());
            }
            Op::Scale(x, factor) => {
                self.accumulate(grads, *x, out_grad * *factor);
            }
            Op::ConcatCols(inputs) => {
                let mut offset = 0;
                for &input in inputs {
                    let c = self.tensor(input).shape().1;
                    if self.nodes[input].0.requires_grad && c > 0 {
                        let slice = out_grad.slice(s![.., offset..offset + c]).to_owned();
                        self.accumulate(grads, input, slice);
                    }
                    offset += c;
                }
            }
            Op::Relu(x) => {
                let mask = self.value(*x).mapv(|v| f64::from(v > 0.0));
                self.accumulate(grads, *x, out_grad * &mask);
            }
            Op::GatherRows(x, rows) => {
                let (xr, xc) = self.tensor(*x).shape();
                let mut dx = Array2::zeros((xr, xc));
                for (out_r, &in_r) in rows.iter().enumerate() {
                    let mut target = dx.row_mut(in_r);
                    target += &out_grad.row(out_r);
                }
                self.accumulate(grads, *x, dx);
            }
            Op::SliceCols(x, start) => {
                let (xr, xc) = self.tensor(*x).shape();
                let mut dx = Array2::zeros((xr, xc));
                dx.slice_mut(s![.., *start..*start + out_grad.ncols()])
                    .assign(out_grad);
                self.accumulate(grads, *x, dx);
            }
            Op::Reshape(x) => {
                let (xr, xc) = self.tensor(*x).shape();
                let flat: Vec<f64> = out_grad.iter().copied().collect();
                let dx = Array2::from_shape_vec((xr, xc), flat).expect("same element count");
                self.accumulate(grads, *x, dx);
            }
            Op::SegmentAgg(x, ctx) => {
                let (xr, xc) = self.tensor(*x).shape();
                let mut dx = Array2::zeros((xr, xc));
                match ctx.mode {
                    Aggregator::Sum => {
                        for (r, &t) in ctx.segments.iter().enumerate() {
                            let mut row = dx.row_mut(r);
                            row += &out_grad.row(t);
                        }
                    }
                    Aggregator::Mean => {
                        for (r, &t) in ctx.segments.iter().enumerate() {
                            let inv = 1.0 / ctx.counts[t] as f64;
                            let mut row = dx.row_mut(r);
                            row.scaled_add(inv, &out_grad.row(t));
                        }
                    }
                    Aggregator::Max => {
                        let winners = ctx.argmax.as_ref().expect("max stores argmax");
                        for t in 0..out_grad.nrows() {
                            for c in 0..xc {
                                let r = winners[(t, c)];
                                if r != usize::MAX {
                                    dx[(r, c)] += out_grad[(t, c)];
                                }
                            }
                        }
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::MaskCombine(pred, use_pred) => {
                let (r, c) = self.tensor(*pred).shape();
                let mut dx = Array2::zeros((r, c));
                for i in 0..r {
                    for j in 0..c {
                        if use_pred[i * c + j] {
                            dx[(i, j)] = out_grad[(i, j)];
                        }
                    }
                }
                self.accumulate(grads, *pred, dx);
            }
            Op::MseLoss(pred, target) => {
                let (pred, target) = (*pred, *target);
                let shape = self.tensor(pred).shape();
                let n = (shape.0 * shape.1) as f64;
                let scale = out_grad[(0, 0)] * 2.0 / n;
                let diff = self.value(pred) - self.value(target);
                if self.nodes[pred].0.requires_grad {
                    self.accumulate(grads, pred, &diff * scale);
                }
                if self.nodes[target].0.requires_grad {
                    self.accumulate(grads, target, &diff * -scale);
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                targets,
                softmax,
            } => {
                let mut dl = softmax.clone();
                for (i, &t) in targets.iter().enumerate() {
                    dl[(i, t)] -= 1.0;
                }
                let scale = out_grad[(0, 0)] / targets.len() as f64;
                self.accumulate(grads, *logits, dl * scale);
            }
        }
    }
}
