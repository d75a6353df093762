//! Variational GCN encoder: L bias-free graph-convolution layers followed by
//! linear mean / log-variance heads. Bias-free keeps the zero-input
//! invariants exact (zero features in, zero embeddings out).

use rand::Rng;

use crate::error::Result;
use crate::linalg::Matrix;
use crate::nn::tape::{Tape, Var};
use crate::rng::rng_from_seed;

/// log-variance head outputs are clamped to this symmetric range to keep
/// exp() inside f64 comfort.
pub const LOGVAR_CLAMP: f64 = 10.0;

#[derive(Clone, Debug, PartialEq)]
pub struct VariationalEncoder {
    /// layers[0] maps input_dim -> hidden, the rest hidden -> hidden.
    pub layers: Vec<Matrix>,
    pub mu_head: Matrix,
    pub logvar_head: Matrix,
}

/// Tape handles for one encoder's parameters.
pub struct EncoderVars {
    pub layers: Vec<Var>,
    pub mu_head: Var,
    pub logvar_head: Var,
}

fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    Matrix::from_vec(rows, cols, data)
}

impl VariationalEncoder {
    pub fn init(
        input_dim: usize,
        hidden_dim: usize,
        embed_dim: usize,
        num_layers: usize,
        seed: u64,
    ) -> Self {
        assert!(num_layers >= 1, "encoder needs at least one layer");
        let mut rng = rng_from_seed(seed);
        let mut layers = Vec::with_capacity(num_layers);
        layers.push(glorot(input_dim, hidden_dim, &mut rng));
        for _ in 1..num_layers {
            layers.push(glorot(hidden_dim, hidden_dim, &mut rng));
        }
        VariationalEncoder {
            layers,
            mu_head: glorot(hidden_dim, embed_dim, &mut rng),
            logvar_head: glorot(hidden_dim, embed_dim, &mut rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.mu_head.cols()
    }

    /// Ordered (name, matrix) view used by the optimizer and serialization.
    pub fn named_params(&self) -> Vec<(String, &Matrix)> {
        let mut out: Vec<(String, &Matrix)> = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, m)| (format!("layer{i}"), m))
            .collect();
        out.push(("mu_head".to_string(), &self.mu_head));
        out.push(("logvar_head".to_string(), &self.logvar_head));
        out
    }

    /// Insert parameters into a tape; frozen experts go in as constants.
    pub fn insert(&self, tape: &mut Tape, trainable: bool) -> EncoderVars {
        EncoderVars {
            layers: self
                .layers
                .iter()
                .map(|m| tape.leaf(m.clone(), trainable))
                .collect(),
            mu_head: tape.leaf(self.mu_head.clone(), trainable),
            logvar_head: tape.leaf(self.logvar_head.clone(), trainable),
        }
    }
}

/// L-layer propagation H <- ReLU(A_norm * H * W).
pub fn gcn_forward(tape: &mut Tape, x: Var, a_norm: Var, layers: &[Var]) -> Result<Var> {
    let mut h = x;
    for &w in layers {
        let mixed = tape.matmul(a_norm, h)?;
        let lin = tape.matmul(mixed, w)?;
        h = tape.relu(lin)?;
    }
    Ok(h)
}

/// Runs the GCN stack and the two heads, returning (mu, logvar).
pub fn encode_variational(
    tape: &mut Tape,
    x: Var,
    a_norm: Var,
    vars: &EncoderVars,
) -> Result<(Var, Var)> {
    let hidden = gcn_forward(tape, x, a_norm, &vars.layers)?;
    let mu = tape.matmul(hidden, vars.mu_head)?;
    let logvar_raw = tape.matmul(hidden, vars.logvar_head)?;
    let logvar = tape.clamp(logvar_raw, -LOGVAR_CLAMP, LOGVAR_CLAMP)?;
    Ok((mu, logvar))
}

/// Z = mu + exp(logvar / 2) ⊙ eps with eps provided explicitly. Gradients
/// flow to mu and logvar, never to eps.
pub fn reparameterize_with(tape: &mut Tape, mu: Var, logvar: Var, eps: Matrix) -> Result<Var> {
    let eps = tape.constant(eps);
    let half = tape.scale(logvar, 0.5)?;
    let sigma = tape.exp(half)?;
    let noise = tape.mul(sigma, eps)?;
    tape.add(mu, noise)
}

/// As [`reparameterize_with`] but drawing eps ~ N(0, I) from a seeded stream.
pub fn reparameterize(tape: &mut Tape, mu: Var, logvar: Var, seed: u64) -> Result<Var> {
    let (rows, cols) = tape.value(mu).shape();
    let eps = standard_normal(rows, cols, seed);
    reparameterize_with(tape, mu, logvar, eps)
}

pub fn standard_normal(rows: usize, cols: usize, seed: u64) -> Matrix {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rng_from_seed(seed);
    let data = (0..rows * cols)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    Matrix::from_vec(rows, cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_adjacency_single_layer_is_relu_xw() {
        let enc = VariationalEncoder::init(3, 4, 2, 1, 9);
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 0.5], vec![0.0, 1.0, -1.0]]);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let av = tape.constant(Matrix::identity(2));
        let vars = enc.insert(&mut tape, false);
        let h = gcn_forward(&mut tape, xv, av, &vars.layers).unwrap();
        let expect = x.matmul(&enc.layers[0]).map(|v| v.max(0.0));
        assert_eq!(tape.value(h), &expect);
    }

    #[test]
    fn zero_input_gives_zero_outputs() {
        let enc = VariationalEncoder::init(3, 4, 2, 2, 10);
        let mut tape = Tape::new();
        let xv = tape.constant(Matrix::zeros(5, 3));
        let av = tape.constant(Matrix::identity(5));
        let vars = enc.insert(&mut tape, false);
        let (mu, logvar) = encode_variational(&mut tape, xv, av, &vars).unwrap();
        assert_eq!(tape.value(mu), &Matrix::zeros(5, 2));
        assert_eq!(tape.value(logvar), &Matrix::zeros(5, 2));
    }

    #[test]
    fn logvar_clamped() {
        let mut enc = VariationalEncoder::init(1, 1, 1, 1, 11);
        enc.layers[0] = Matrix::scalar(1.0);
        enc.logvar_head = Matrix::scalar(50.0);
        enc.mu_head = Matrix::scalar(1.0);
        let mut tape = Tape::new();
        let xv = tape.constant(Matrix::scalar(1.0));
        let av = tape.constant(Matrix::identity(1));
        let vars = enc.insert(&mut tape, false);
        let (_, logvar) = encode_variational(&mut tape, xv, av, &vars).unwrap();
        assert_eq!(tape.value(logvar)[(0, 0)], LOGVAR_CLAMP);
    }

    #[test]
    fn two_layer_path_matches_matrix_oracle() {
        // 5-node path graph, unnormalized adjacency fed directly: the oracle
        // is two explicit (A H W -> relu) steps.
        let mut a = Matrix::zeros(5, 5);
        for i in 0..4 {
            a[(i, i + 1)] = 1.0;
            a[(i + 1, i)] = 1.0;
        }
        let enc = VariationalEncoder::init(3, 4, 2, 2, 12);
        let x = super::standard_normal(5, 3, 77);

        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let av = tape.constant(a.clone());
        let vars = enc.insert(&mut tape, false);
        let h = gcn_forward(&mut tape, xv, av, &vars.layers).unwrap();

        let step1 = a.matmul(&x).matmul(&enc.layers[0]).map(|v| v.max(0.0));
        let step2 = a.matmul(&step1).matmul(&enc.layers[1]).map(|v| v.max(0.0));
        let diff = tape.value(h).sub(&step2).max_abs();
        assert!(diff < 1e-12, "diff {diff}");
    }

    #[test]
    fn reparameterize_deterministic_and_near_mu_when_variance_tiny() {
        let mu = Matrix::from_vec(2, 2, vec![1.0, -1.0, 0.5, 2.0]);
        let logvar = Matrix::from_vec(2, 2, vec![-LOGVAR_CLAMP; 4]);
        let mut t1 = Tape::new();
        let m1 = t1.constant(mu.clone());
        let l1 = t1.constant(logvar.clone());
        let z1 = reparameterize(&mut t1, m1, l1, 5).unwrap();
        let mut t2 = Tape::new();
        let m2 = t2.constant(mu.clone());
        let l2 = t2.constant(logvar.clone());
        let z2 = reparameterize(&mut t2, m2, l2, 5).unwrap();
        assert_eq!(t1.value(z1), t2.value(z2));
        // sigma = exp(-5) ~ 6.7e-3, so |Z - mu| <= 0.01 |eps| easily
        let dev = t1.value(z1).sub(&mu).max_abs();
        assert!(dev < 0.05);
    }

    #[test]
    fn mu_gradient_matches_finite_differences() {
        let enc = VariationalEncoder::init(2, 3, 2, 1, 13);
        let x = super::standard_normal(4, 2, 88);
        let a = Matrix::identity(4);

        let grad = {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let av = tape.constant(a.clone());
            let vars = enc.insert(&mut tape, true);
            let (mu, _) = encode_variational(&mut tape, xv, av, &vars).unwrap();
            let s = tape.sum_all(mu).unwrap();
            tape.backward(s).unwrap();
            tape.grad(vars.mu_head).unwrap().clone()
        };

        let eval = |w: &Matrix| -> f64 {
            let mut e = enc.clone();
            e.mu_head = w.clone();
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let av = tape.constant(a.clone());
            let vars = e.insert(&mut tape, false);
            let (mu, _) = encode_variational(&mut tape, xv, av, &vars).unwrap();
            let s = tape.sum_all(mu).unwrap();
            tape.value(s)[(0, 0)]
        };

        let h = 1e-6;
        for k in 0..enc.mu_head.as_slice().len() {
            let mut plus = enc.mu_head.clone();
            plus.as_mut_slice()[k] += h;
            let mut minus = enc.mu_head.clone();
            minus.as_mut_slice()[k] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let ad = grad.as_slice()[k];
            assert!((ad - fd).abs() / ad.abs().max(fd.abs()).max(1.0) < 1e-6);
        }
    }
}
