use std::fmt;
use std::rc::Rc;

/// Errors raised by tensor construction, ops, and the backward pass.
#[derive(Clone, Debug, PartialEq)]
pub enum MathError {
    /// Incompatible operand shapes, e.g. a matmul inner-dimension mismatch.
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    /// Value buffer length does not match the declared shape.
    DataLength { expected: usize, got: usize },
    /// `backward` was started from a non-scalar node.
    NotScalar { shape: (usize, usize) },
    /// An op produced (or was handed) a NaN/Inf value.
    NonFinite { op: &'static str },
    /// A gradient fed to the optimizer is NaN/Inf; names the parameter.
    NonFiniteGradient { param: String },
    /// Argument outside its contract (non-positive scale, empty set, ...).
    InvalidArgument { op: &'static str, message: String },
}

impl fmt::Display for MathError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MathError::ShapeMismatch { op, left, right } => write!(
                f,
                "{op}: incompatible shapes {}x{} and {}x{}",
                left.0, left.1, right.0, right.1
            ),
            MathError::DataLength { expected, got } => {
                write!(f, "value buffer holds {got} entries, shape requires {expected}")
            }
            MathError::NotScalar { shape } => {
                write!(f, "backward requires a 1x1 loss, got {}x{}", shape.0, shape.1)
            }
            MathError::NonFinite { op } => write!(f, "{op}: non-finite value produced"),
            MathError::NonFiniteGradient { param } => {
                write!(f, "non-finite gradient for parameter `{param}`")
            }
            MathError::InvalidArgument { op, message } => write!(f, "{op}: {message}"),
        }
    }
}

impl std::error::Error for MathError {}

/// Handle to a node on a [`Tape`]. Only valid for the tape that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TensorId(usize);

/// A named, trainable value living outside any tape.
///
/// Trainers own `Param`s across steps and re-enter them as tape leaves on
/// every forward pass.
#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub shape: (usize, usize),
    pub data: Vec<f64>,
}

impl Param {
    pub fn new(name: impl Into<String>, shape: (usize, usize), data: Vec<f64>) -> Param {
        assert_eq!(shape.0 * shape.1, data.len(), "param data/shape mismatch");
        Param {
            name: name.into(),
            shape,
            data,
        }
    }

    pub fn zeros(name: impl Into<String>, shape: (usize, usize)) -> Param {
        Param::new(name, shape, vec![0.0; shape.0 * shape.1])
    }

    /// Enter this parameter on a tape. `trainable = false` detaches it.
    pub fn enter(&self, tape: &mut Tape, trainable: bool) -> Result<TensorId, MathError> {
        tape.leaf(self.shape, self.data.clone(), trainable)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

enum Op {
    Leaf,
    MatMul(TensorId, TensorId),
    Transpose(TensorId),
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Div(TensorId, TensorId),
    AddScalar(TensorId),
    MulScalar(TensorId, f64),
    AddRow(TensorId, TensorId),
    LeakyRelu(TensorId, f64),
    Exp(TensorId),
    Ln(TensorId),
    Sqrt(TensorId),
    Sum(TensorId),
    Mean(TensorId),
    RowSums(TensorId),
    ColMeans(TensorId),
    NormalizeRows(TensorId, Vec<f64>),
    SoftmaxRows(TensorId, f64),
    LogSoftmaxRows(TensorId, f64),
    GatherRows(TensorId, Rc<Vec<usize>>),
    NeighborMean(TensorId, Rc<Vec<Vec<usize>>>),
    ConcatCols(TensorId, TensorId),
}

struct Node {
    shape: (usize, usize),
    values: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by one backward pass, indexed by [`TensorId`].
#[derive(Debug)]
pub struct Gradients {
    by_node: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: TensorId) -> Option<&[f64]> {
        self.by_node.get(id.0).and_then(|g| g.as_deref())
    }
}

/// Record of one forward pass; nodes are topologically ordered by insertion.
pub struct Tape {
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: TensorId) -> (usize, usize) {
        self.nodes[id.0].shape
    }

    pub fn values(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].values
    }

    /// Value of a 1x1 node.
    pub fn item(&self, id: TensorId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].shape, (1, 1));
        self.nodes[id.0].values[0]
    }

    pub fn leaf(
        &mut self,
        shape: (usize, usize),
        values: Vec<f64>,
        requires_grad: bool,
    ) -> Result<TensorId, MathError> {
        if shape.0 * shape.1 != values.len() {
            return Err(MathError::DataLength {
                expected: shape.0 * shape.1,
                got: values.len(),
            });
        }
        if shape.0 == 0 || shape.1 == 0 {
            return Err(MathError::InvalidArgument {
                op: "leaf",
                message: "dimensions must be positive".into(),
            });
        }
        self.push(shape, values, Op::Leaf, requires_grad, "leaf")
    }

    pub fn constant(&mut self, shape: (usize, usize), values: Vec<f64>) -> Result<TensorId, MathError> {
        self.leaf(shape, values, false)
    }

    pub fn scalar(&mut self, v: f64) -> Result<TensorId, MathError> {
        self.leaf((1, 1), vec![v], false)
    }

    fn push(
        &mut self,
        shape: (usize, usize),
        values: Vec<f64>,
        op: Op,
        needs_grad: bool,
        opname: &'static str,
    ) -> Result<TensorId, MathError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(MathError::NonFinite { op: opname });
        }
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node {
            shape,
            values,
            op,
            needs_grad,
        });
        Ok(id)
    }

    fn needs(&self, id: TensorId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn same_shape(
        &self,
        op: &'static str,
        a: TensorId,
        b: TensorId,
    ) -> Result<(usize, usize), MathError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(MathError::ShapeMismatch {
                op,
                left: sa,
                right: sb,
            });
        }
        Ok(sa)
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, MathError> {
        let (p, q) = self.shape(a);
        let (q2, r) = self.shape(b);
        if q != q2 {
            return Err(MathError::ShapeMismatch {
                op: "matmul",
                left: (p, q),
                right: (q2, r),
            });
        }
        let out = matmul_raw(self.values(a), self.values(b), p, q, r);
        let needs = self.needs(a) || self.needs(b);
        self.push((p, r), out, Op::MatMul(a, b), needs, "matmul")
    }

    pub fn transpose(&mut self, a: TensorId) -> Result<TensorId, MathError> {
        let (n, m) = self.shape(a);
        let src = self.values(a);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[j * n + i] = src[i * m + j];
            }
        }
        let needs = self.needs(a);
        self.push((m, n), out, Op::Transpose(a), needs, "transpose")
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, MathError> {
        let shape = self.same_shape("add", a, b)?;
        let out = zip_vals(self.values(a), self.values(b), |x, y| x + y);
        let needs = self.needs(a) || self.needs(b);
        self.push(shape, out, Op::Add(a, b), needs, "add")
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, MathError> {
        let shape = self.same_shape("sub", a, b)?;
        let out = zip_vals(self.values(a), self.values(b), |x, y| x - y);
        let needs = self.needs(a) || self.needs(b);
        self.push(shape, out, Op::Sub(a, b), needs, "sub")
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, MathError> {
        let shape = self.same_shape("mul", a, b)?;
        let out = zip_vals(self.values(a), self.values(b), |x, y| x * y);
        let needs = self.needs(a) || self.needs(b);
        self.push(shape, out, Op::Mul(a, b), needs, "mul")
    }

    pub fn div(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, MathError> {
        let shape = self.same_shape("div", a, b)?;
        let out = zip_vals(self.values(a), self.values(b), |x, y| x / y);
        let needs = self.needs(a) || self.needs(b);
        self.push(shape, out, Op::Div(a, b), needs, "div")
    }

    pub fn add_scalar(&mut self, a: TensorId, c: f64) -> Result<TensorId, MathError> {
        let shape = self.shape(a);
        let out: Vec<f64> = self.values(a).iter().map(|x| x + c).collect();
        let needs = self.needs(a);
        self.push(shape, out, Op::AddScalar(a), needs, "add_scalar")
    }

    pub fn mul_scalar(&mut self, a: TensorId, c: f64) -> Result<TensorId, MathError> {
        let shape = self.shape(a);
        let out: Vec<f64> = self.values(a).iter().map(|x| x * c).collect();
        let needs = self.needs(a);
        self.push(shape, out, Op::MulScalar(a, c), needs, "mul_scalar")
    }

    /// Broadcast-add a 1xd row vector to every row of an nxd matrix.
    pub fn add_row(&mut self, a: TensorId, row: TensorId) -> Result<TensorId, MathError> {
        let (n, d) = self.shape(a);
        let rs = self.shape(row);
        if rs != (1, d) {
            return Err(MathError::ShapeMismatch {
                op: "add_row",
                left: (n, d),
                right: rs,
            });
        }
        let rv = self.values(row).to_vec();
        let out: Vec<f64> = self
            .values(a)
            .iter()
            .enumerate()
            .map(|(i, x)| x + rv[i % d])
            .collect();
        let needs = self.needs(a) || self.needs(row);
        self.push((n, d), out, Op::AddRow(a, row), needs, "add_row")
    }

    pub fn leaky_relu(&mut self, a: TensorId, slope: f64) -> Result<TensorId, MathError> {
        let shape = self.shape(a);
        let out: Vec<f64> = self
            .values(a)
            .iter()
            .map(|&x| if x >= 0.0 { x } else { slope * x })
            .collect();
        let needs = self.needs(a);
        self.push(shape, out, Op::LeakyRelu(a, slope), needs, "leaky_relu")
    }

    pub fn exp(&mut self, a: TensorId) -> Result<TensorId, MathError> {
        let shape = self.shape(a);
        let out: Vec<f64> = self.values(a).iter().map(|x| x.exp()).collect();
        let needs = self.needs(a);
        self.push(shape, out, Op::Exp(a), needs, "exp")
    }

    pub fn ln(&mut self, a: TensorId) -> Result<TensorId, MathError> {
        let shape = self.shape(a);
        let out: Vec<f64> = self.values(a).iter().map(|x| x.ln()).collect();
        let needs = self.needs(a);
        self.push(shape, out, Op::Ln(a), needs, "ln")
    }

    pub fn sqrt(&mut self, a: TensorId) -> Result<TensorId, MathError> {
        let shape = self.shape(a);
        let out: Vec<f64> = self.values(a).iter().map(|x| x.sqrt()).collect();
        let needs = self.needs(a);
        self.push(shape, out, Op::Sqrt(a), needs, "sqrt")
    }

    /// Sum of all entries, as a 1x1 node.
    pub fn sum(&mut self, a: TensorId) -> Result<TensorId, MathError> {
        let total: f64 = self.values(a).iter().sum();
        let needs = self.needs(a);
        self.push((1, 1), vec![total], Op::Sum(a), needs, "sum")
    }

    /// Mean of all entries, as a 1x1 node.
    pub fn mean(&mut self, a: TensorId) -> Result<TensorId, MathError> {
        let vals = self.values(a);
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let needs = self.needs(a);
        self.push((1, 1), vec![m], Op::Mean(a), needs, "mean")
    }

    /// Per-row sums: nxd -> nx1.
    pub fn row_sums(&mut self, a: TensorId) -> Result<TensorId, MathError> {
        let (n, d) = self.shape(a);
        let src = self.values(a);
        let out: Vec<f64> = (0..n).map(|i| src[i * d..(i + 1) * d].iter().sum()).collect();
        let needs = self.needs(a);
        self.push((n, 1), out, Op::RowSums(a), needs, "row_sums")
    }

    /// Column means (mean pooling over rows): nxd -> 1xd.
    pub fn col_means(&mut self, a: TensorId) -> Result<TensorId, MathError> {
        let (n, d) = self.shape(a);
        let src = self.values(a);
        let mut out = vec![0.0; d];
        for i in 0..n {
            for j in 0..d {
                out[j] += src[i * d + j];
            }
        }
        for v in out.iter_mut() {
            *v /= n as f64;
        }
        let needs = self.needs(a);
        self.push((1, d), out, Op::ColMeans(a), needs, "col_means")
    }

    /// L2-normalizes each row. Rows with norm below 1e-12 are left unscaled.
    pub fn normalize_rows(&mut self, a: TensorId) -> Result<TensorId, MathError> {
        let (n, d) = self.shape(a);
        let src = self.values(a);
        let mut norms = vec![0.0; n];
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            let row = &src[i * d..(i + 1) * d];
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            norms[i] = norm;
            for j in 0..d {
                out[i * d + j] = row[j] / norm;
            }
        }
        let needs = self.needs(a);
        self.push((n, d), out, Op::NormalizeRows(a, norms), needs, "normalize_rows")
    }

    /// Row-wise softmax of `a / scale`, stabilized by row-max subtraction.
    pub fn softmax_rows(&mut self, a: TensorId, scale: f64) -> Result<TensorId, MathError> {
        if scale <= 0.0 {
            return Err(MathError::InvalidArgument {
                op: "softmax_rows",
                message: format!("scale must be positive, got {scale}"),
            });
        }
        let (n, d) = self.shape(a);
        let src = self.values(a);
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            softmax_row(&src[i * d..(i + 1) * d], scale, &mut out[i * d..(i + 1) * d]);
        }
        let needs = self.needs(a);
        self.push((n, d), out, Op::SoftmaxRows(a, scale), needs, "softmax_rows")
    }

    /// Row-wise log-softmax of `a / scale`.
    pub fn log_softmax_rows(&mut self, a: TensorId, scale: f64) -> Result<TensorId, MathError> {
        if scale <= 0.0 {
            return Err(MathError::InvalidArgument {
                op: "log_softmax_rows",
                message: format!("scale must be positive, got {scale}"),
            });
        }
        let (n, d) = self.shape(a);
        let src = self.values(a);
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            let row = &src[i * d..(i + 1) * d];
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x / scale));
            let lse = row.iter().map(|&x| (x / scale - max).exp()).sum::<f64>().ln() + max;
            for j in 0..d {
                out[i * d + j] = row[j] / scale - lse;
            }
        }
        let needs = self.needs(a);
        self.push((n, d), out, Op::LogSoftmaxRows(a, scale), needs, "log_softmax_rows")
    }

    /// Selects rows by index (duplicates allowed); backward scatter-adds.
    pub fn gather_rows(&mut self, a: TensorId, idx: &[usize]) -> Result<TensorId, MathError> {
        let (n, d) = self.shape(a);
        if idx.is_empty() {
            return Err(MathError::InvalidArgument {
                op: "gather_rows",
                message: "index list is empty".into(),
            });
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(MathError::InvalidArgument {
                op: "gather_rows",
                message: format!("row index {bad} out of bounds for {n} rows"),
            });
        }
        let src = self.values(a);
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            out.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let needs = self.needs(a);
        let shape = (idx.len(), d);
        self.push(
            shape,
            out,
            Op::GatherRows(a, Rc::new(idx.to_vec())),
            needs,
            "gather_rows",
        )
    }

    /// Row i of the output is the mean of `a`'s rows listed in `neighbors[i]`.
    pub fn neighbor_mean(
        &mut self,
        a: TensorId,
        neighbors: Rc<Vec<Vec<usize>>>,
    ) -> Result<TensorId, MathError> {
        let (n, d) = self.shape(a);
        if neighbors.len() != n {
            return Err(MathError::InvalidArgument {
                op: "neighbor_mean",
                message: format!("{} neighbor lists for {n} rows", neighbors.len()),
            });
        }
        let src = self.values(a);
        let mut out = vec![0.0; n * d];
        for (i, nbrs) in neighbors.iter().enumerate() {
            if nbrs.is_empty() {
                return Err(MathError::InvalidArgument {
                    op: "neighbor_mean",
                    message: format!("empty neighbor list at row {i}"),
                });
            }
            for &j in nbrs {
                for c in 0..d {
                    out[i * d + c] += src[j * d + c];
                }
            }
            let inv = 1.0 / nbrs.len() as f64;
            for c in 0..d {
                out[i * d + c] *= inv;
            }
        }
        let needs = self.needs(a);
        self.push((n, d), out, Op::NeighborMean(a, neighbors), needs, "neighbor_mean")
    }

    /// Horizontal concatenation: nxd1, nxd2 -> nx(d1+d2).
    pub fn concat_cols(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, MathError> {
        let (na, da) = self.shape(a);
        let (nb, db) = self.shape(b);
        if na != nb {
            return Err(MathError::ShapeMismatch {
                op: "concat_cols",
                left: (na, da),
                right: (nb, db),
            });
        }
        let (va, vb) = (self.values(a), self.values(b));
        let mut out = Vec::with_capacity(na * (da + db));
        for i in 0..na {
            out.extend_from_slice(&va[i * da..(i + 1) * da]);
            out.extend_from_slice(&vb[i * db..(i + 1) * db]);
        }
        let needs = self.needs(a) || self.needs(b);
        self.push((na, da + db), out, Op::ConcatCols(a, b), needs, "concat_cols")
    }

    /// Reverse pass from a scalar loss. Visits recorded ops once, in reverse
    /// order; gradients are returned per node, populated only along paths
    /// that reach a trainable leaf.
    pub fn backward(&self, loss: TensorId) -> Result<Gradients, MathError> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(MathError::NotScalar { shape });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let go = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(go);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (p, q) = self.shape(*a);
                    let r = self.shape(*b).1;
                    if self.needs(*a) {
                        // gA += gO . B^T
                        let bv = self.values(*b);
                        let ga = acc(&mut grads, *a, p * q);
                        for i in 0..p {
                            for j in 0..r {
                                let g = go[i * r + j];
                                if g == 0.0 {
                                    continue;
                                }
                                for k in 0..q {
                                    ga[i * q + k] += g * bv[k * r + j];
                                }
                            }
                        }
                    }
                    if self.needs(*b) {
                        // gB += A^T . gO
                        let av = self.values(*a);
                        let gb = acc(&mut grads, *b, q * r);
                        for i in 0..p {
                            for k in 0..q
                            {
                                let a_ik = av[i * q + k];
                                if a_ik == 0.0 {
                                    continue;
                                }
                                for j in 0..r {
                                    gb[k * r + j] += a_ik * go[i * r + j];
                                }
                            }
                        }
                    }
                }
                Op::Transpose(a) => {
                    if self.needs(*a) {
                        let (n, m) = self.shape(*a);
                        let ga = acc(&mut grads, *a, n * m);
                        for i in 0..n {
                            for j in 0..m {
                                ga[i * m + j] += go[j * n + i];
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for src in [a, b] {
                        if self.needs(*src) {
                            add_into(acc(&mut grads, *src, go.len()), &go, 1.0);
                        }
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs(*a) {
                        add_into(acc(&mut grads, *a, go.len()), &go, 1.0);
                    }
                    if self.needs(*b) {
                        add_into(acc(&mut grads, *b, go.len()), &go, -1.0);
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        let bv = self.values(*b);
                        let ga = acc(&mut grads, *a, go.len());
                        for (i, g) in go.iter().enumerate() {
                            ga[i] += g * bv[i];
                        }
                    }
                    if self.needs(*b) {
                        let av = self.values(*a);
                        let gb = acc(&mut grads, *b, go.len());
                        for (i, g) in go.iter().enumerate() {
                            gb[i] += g * av[i];
                        }
                    }
                }
                Op::Div(a, b) => {
                    let bv = self.values(*b);
                    if self.needs(*a) {
                        let ga = acc(&mut grads, *a, go.len());
                        for (i, g) in go.iter().enumerate() {
                            ga[i] += g / bv[i];
                        }
                    }
                    if self.needs(*b) {
                        let av = self.values(*a);
                        let gb = acc(&mut grads, *b, go.len());
                        for (i, g) in go.iter().enumerate() {
                            gb[i] -= g * av[i] / (bv[i] * bv[i]);
                        }
                    }
                }
                Op::AddScalar(a) => {
                    if self.needs(*a) {
                        add_into(acc(&mut grads, *a, go.len()), &go, 1.0);
                    }
                }
                Op::MulScalar(a, c) => {
                    if self.needs(*a) {
                        add_into(acc(&mut grads, *a, go.len()), &go, *c);
                    }
                }
                Op::AddRow(a, row) => {
                    let (n, d) = self.shape(*a);
                    if self.needs(*a) {
                        add_into(acc(&mut grads, *a, go.len()), &go, 1.0);
                    }
                    if self.needs(*row) {
                        let gr = acc(&mut grads, *row, d);
                        for i in 0..n {
                            for j in 0..d {
                                gr[j] += go[i * d + j];
                            }
                        }
                    }
                }
                Op::LeakyRelu(a, slope) => {
                    if self.needs(*a) {
                        let av = self.values(*a);
                        let ga = acc(&mut grads, *a, go.len());
                        for (i, g) in go.iter().enumerate() {
                            ga[i] += g * if av[i] >= 0.0 { 1.0 } else { *slope };
                        }
                    }
                }
                Op::Exp(a) => {
                    if self.needs(*a) {
                        let out = &node.values;
                        let ga = acc(&mut grads, *a, go.len());
                        for (i, g) in go.iter().enumerate() {
                            ga[i] += g * out[i];
                        }
                    }
                }
                Op::Ln(a) => {
                    if self.needs(*a) {
                        let av = self.values(*a);
                        let ga = acc(&mut grads, *a, go.len());
                        for (i, g) in go.iter().enumerate() {
                            ga[i] += g / av[i];
                        }
                    }
                }
                Op::Sqrt(a) => {
                    if self.needs(*a) {
                        let out = &node.values;
                        let ga = acc(&mut grads, *a, go.len());
                        for (i, g) in go.iter().enumerate() {
                            ga[i] += g * 0.5 / out[i];
                        }
                    }
                }
                Op::Sum(a) => {
                    if self.needs(*a) {
                        let len = self.values(*a).len();
                        add_const(acc(&mut grads, *a, len), go[0]);
                    }
                }
                Op::Mean(a) => {
                    if self.needs(*a) {
                        let len = self.values(*a).len();
                        add_const(acc(&mut grads, *a, len), go[0] / len as f64);
                    }
                }
                Op::RowSums(a) => {
                    if self.needs(*a) {
                        let (n, d) = self.shape(*a);
                        let ga = acc(&mut grads, *a, n * d);
                        for i in 0..n {
                            for j in 0..d {
                                ga[i * d + j] += go[i];
                            }
                        }
                    }
                }
                Op::ColMeans(a) => {
                    if self.needs(*a) {
                        let (n, d) = self.shape(*a);
                        let inv = 1.0 / n as f64;
                        let ga = acc(&mut grads, *a, n * d);
                        for i in 0..n {
                            for j in 0..d {
                                ga[i * d + j] += go[j] * inv;
                            }
                        }
                    }
                }
                Op::NormalizeRows(a, norms) => {
                    if self.needs(*a) {
                        let (n, d) = self.shape(*a);
                        let out = &node.values;
                        let ga = acc(&mut grads, *a, n * d);
                        for i in 0..n {
                            let y = &out[i * d..(i + 1) * d];
                            let g = &go[i * d..(i + 1) * d];
                            let dot: f64 = g.iter().zip(y).map(|(gi, yi)| gi * yi).sum();
                            for j in 0..d {
                                ga[i * d + j] += (g[j] - dot * y[j]) / norms[i];
                            }
                        }
                    }
                }
                Op::SoftmaxRows(a, scale) => {
                    if self.needs(*a) {
                        let (n, d) = self.shape(*a);
                        let out = &node.values;
                        let ga = acc(&mut grads, *a, n * d);
                        for i in 0..n {
                            let y = &out[i * d..(i + 1) * d];
                            let g = &go[i * d..(i + 1) * d];
                            let dot: f64 = g.iter().zip(y).map(|(gi, yi)| gi * yi).sum();
                            for j in 0..d {
                                ga[i * d + j] += y[j] * (g[j] - dot) / scale;
                            }
                        }
                    }
                }
                Op::LogSoftmaxRows(a, scale) => {
                    if self.needs(*a) {
                        let (n, d) = self.shape(*a);
                        let out = &node.values;
                        let ga = acc(&mut grads, *a, n * d);
                        for i in 0..n {
                            let ly = &out[i * d..(i + 1) * d];
                            let g = &go[i * d..(i + 1) * d];
                            let gsum: f64 = g.iter().sum();
                            for j in 0..d {
                                ga[i * d + j] += (g[j] - gsum * ly[j].exp()) / scale;
                            }
                        }
                    }
                }
                Op::GatherRows(a, idx) => {
                    if self.needs(*a) {
                        let (n, d) = self.shape(*a);
                        let ga = acc(&mut grads, *a, n * d);
                        for (r, &i) in idx.iter().enumerate() {
                            for j in 0..d {
                                ga[i * d + j] += go[r * d + j];
                            }
                        }
                    }
                }
                Op::NeighborMean(a, neighbors) => {
                    if self.needs(*a) {
                        let (n, d) = self.shape(*a);
                        let ga = acc(&mut grads, *a, n * d);
                        for (i, nbrs) in neighbors.iter().enumerate() {
                            let inv = 1.0 / nbrs.len() as f64;
                            for &j in nbrs.iter() {
                                for c in 0..d {
                                    ga[j * d + c] += go[i * d + c] * inv;
                                }
                            }
                        }
                    }
                }
                Op::ConcatCols(a, b) => {
                    let (n, da) = self.shape(*a);
                    let db = self.shape(*b).1;
                    if self.needs(*a) {
                        let ga = acc(&mut grads, *a, n * da);
                        for i in 0..n {
                            for j in 0..da {
                                ga[i * da + j] += go[i * (da + db) + j];
                            }
                        }
                    }
                    if self.needs(*b) {
                        let gb = acc(&mut grads, *b, n * db);
                        for i in 0..n {
                            for j in 0..db {
                                gb[i * db + j] += go[i * (da + db) + da + j];
                            }
                        }
                    }
                }
            }
        }
        Ok(Gradients { by_node: grads })
    }
}

/// Mean softmax cross-entropy over rows of `logits` at the given labels.
///
/// `labels[i]` indexes a column of row `i`. Composes log-softmax with a
/// one-hot mask so the gradient flows through the tape.
pub fn softmax_cross_entropy(
    tape: &mut Tape,
    logits: TensorId,
    labels: &[usize],
) -> Result<TensorId, MathError> {
    let (n, c) = tape.shape(logits);
    if labels.len() != n {
        return Err(MathError::InvalidArgument {
            op: "softmax_cross_entropy",
            message: format!("{} labels for {n} rows", labels.len()),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(MathError::InvalidArgument {
            op: "softmax_cross_entropy",
            message: format!("label {bad} out of range for {c} classes"),
        });
    }
    let mut mask = vec![0.0; n * c];
    for (i, &l) in labels.iter().enumerate() {
        mask[i * c + l] = 1.0;
    }
    let logp = tape.log_softmax_rows(logits, 1.0)?;
    let mask_t = tape.constant((n, c), mask)?;
    let picked = tape.mul(logp, mask_t)?;
    let total = tape.sum(picked)?;
    tape.mul_scalar(total, -1.0 / n as f64)
}

fn softmax_row(row: &[f64], scale: f64, out: &mut [f64]) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x / scale));
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        let e = (x / scale - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

fn matmul_raw(a: &[f64], b: &[f64], p: usize, q: usize, r: usize) -> Vec<f64> {
    let mut out = vec![0.0; p * r];
    for i in 0..p {
        for k in 0..q {
            let a_ik = a[i * q + k];
            if a_ik == 0.0 {
                continue;
            }
            let brow = &b[k * r..(k + 1) * r];
            let orow = &mut out[i * r..(i + 1) * r];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += a_ik * bv;
            }
        }
    }
    out
}

fn zip_vals(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn acc<'g>(grads: &'g mut [Option<Vec<f64>>], id: TensorId, len: usize) -> &'g mut Vec<f64> {
    grads[id.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64], scale: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s * scale;
    }
}

fn add_const(dst: &mut [f64], c: f64) {
    for d in dst.iter_mut() {
        *d += c;
    }
}
