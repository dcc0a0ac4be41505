//! Reference kernels in double precision: pixel unshuffle (space-to-depth)
//! and the last-K-layer negative cosine distillation loss with its analytic
//! gradient.

use rand::Rng as _;
use serde::Serialize;
use thiserror::Error;

use crate::par::{map_range, Execution};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("zero-norm {which} vector at layer {layer}, token {token}")]
    ZeroNorm {
        which: &'static str,
        layer: usize,
        token: usize,
    },
}

/// Row-major `height × width × channels` grid of patch features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl FeatureGrid {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Self, KernelError> {
        if data.len() != height * width * channels {
            return Err(KernelError::Shape(format!(
                "{height}x{width}x{channels} grid needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(FeatureGrid {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn tokens(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.width + col) * self.channels + ch
    }

    pub fn at(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[self.index(row, col, ch)]
    }
}

/// Merges every `factor × factor` block into one position:
/// `out[r, c, (dy·f + dx)·C + ch] = in[r·f + dy, c·f + dx, ch]`.
pub fn pixel_unshuffle(grid: &FeatureGrid, factor: usize) -> Result<FeatureGrid, KernelError> {
    if factor == 0 {
        return Err(KernelError::Shape(
            "unshuffle factor must be positive".into(),
        ));
    }
    if !grid.height.is_multiple_of(factor) || !grid.width.is_multiple_of(factor) {
        return Err(KernelError::Shape(format!(
            "{}x{} grid is not divisible by factor {factor}",
            grid.height, grid.width
        )));
    }
    let (oh, ow, oc) = (
        grid.height / factor,
        grid.width / factor,
        grid.channels * factor * factor,
    );
    let c = grid.channels;
    let mut data = Vec::with_capacity(grid.data.len());
    for r in 0..oh {
        for col in 0..ow {
            for dy in 0..factor {
                for dx in 0..factor {
                    let src = grid.index(r * factor + dy, col * factor + dx, 0);
                    data.extend_from_slice(&grid.data[src..src + c]);
                }
            }
        }
    }
    FeatureGrid::new(oh, ow, oc, data)
}

/// Inverse of [`pixel_unshuffle`] (depth-to-space).
pub fn pixel_shuffle(grid: &FeatureGrid, factor: usize) -> Result<FeatureGrid, KernelError> {
    if factor == 0 || !grid.channels.is_multiple_of(factor * factor) {
        return Err(KernelError::Shape(format!(
            "{} channels not divisible by {factor}²",
            grid.channels
        )));
    }
    let c = grid.channels / (factor * factor);
    let (oh, ow) = (grid.height * factor, grid.width * factor);
    let mut data = vec![0.0; grid.data.len()];
    for r in 0..grid.height {
        for col in 0..grid.width {
            for dy in 0..factor {
                for dx in 0..factor {
                    let src = grid.index(r, col, (dy * factor + dx) * c);
                    let dst = ((r * factor + dy) * ow + col * factor + dx) * c;
                    data[dst..dst + c].copy_from_slice(&grid.data[src..src + c]);
                }
            }
        }
    }
    FeatureGrid::new(oh, ow, c, data)
}

/// Hidden states of the last `layers` transformer blocks, laid out
/// `[layer][token][dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStateStack {
    pub layers: usize,
    pub tokens: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl HiddenStateStack {
    pub fn new(
        layers: usize,
        tokens: usize,
        dim: usize,
        data: Vec<f64>,
    ) -> Result<Self, KernelError> {
        if layers == 0 || tokens == 0 || dim == 0 {
            return Err(KernelError::Shape(format!(
                "empty stack {layers}x{tokens}x{dim}"
            )));
        }
        if data.len() != layers * tokens * dim {
            return Err(KernelError::Shape(format!(
                "{layers}x{tokens}x{dim} stack needs {} values, got {}",
                layers * tokens * dim,
                data.len()
            )));
        }
        Ok(HiddenStateStack {
            layers,
            tokens,
            dim,
            data,
        })
    }

    /// Uniform values in `[-1, 1)` from a seeded stream.
    pub fn random(layers: usize, tokens: usize, dim: usize, seed: u64) -> Self {
        let mut r = rng::rng_from_seed(seed);
        let data = (0..layers * tokens * dim)
            .map(|_| r.gen::<f64>() * 2.0 - 1.0)
            .collect();
        HiddenStateStack {
            layers,
            tokens,
            dim,
            data,
        }
    }

    pub fn vector(&self, layer: usize, token: usize) -> &[f64] {
        let start = (layer * self.tokens + token) * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn same_shape(&self, other: &HiddenStateStack) -> bool {
        (self.layers, self.tokens, self.dim) == (other.layers, other.tokens, other.dim)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillOutput {
    pub loss: f64,
    /// d loss / d student, same layout as `student.data`.
    pub grad: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `loss = -(1 / (K·N)) Σ cos(s_kn, t_kn)` with the teacher held constant.
///
/// For one vector pair the gradient is
/// `-(1/(K·N)) · (t / (|s||t|) - cos · s / |s|²)`.
pub fn distill_loss(
    student: &HiddenStateStack,
    teacher: &HiddenStateStack,
) -> Result<DistillOutput, KernelError> {
    if !student.same_shape(teacher) {
        return Err(KernelError::Shape(format!(
            "student {}x{}x{} vs teacher {}x{}x{}",
            student.layers,
            student.tokens,
            student.dim,
            teacher.layers,
            teacher.tokens,
            teacher.dim
        )));
    }
    let scale = 1.0 / (student.layers * student.tokens) as f64;
    let mut grad = vec![0.0; student.data.len()];
    let mut cos_sum = 0.0;
    for layer in 0..student.layers {
        for token in 0..student.tokens {
            let s = student.vector(layer, token);
            let t = teacher.vector(layer, token);
            let ss = dot(s, s);
            let tt = dot(t, t);
            if ss == 0.0 {
                return Err(KernelError::ZeroNorm {
                    which: "student",
                    layer,
                    token,
                });
            }
            if tt == 0.0 {
                return Err(KernelError::ZeroNorm {
                    which: "teacher",
                    layer,
                    token,
                });
            }
            // sqrt(ss * ss) == ss exactly, so identical vectors give cos == 1
            let norms = (ss * tt).sqrt();
            let cos = dot(s, t) / norms;
            cos_sum += cos;
            let start = (layer * student.tokens + token) * student.dim;
            for (i, g) in grad[start..start + student.dim].iter_mut().enumerate() {
                *g = -scale * (t[i] / norms - cos * s[i] / ss);
            }
        }
    }
    Ok(DistillOutput {
        loss: -cos_sum / (student.layers * student.tokens) as f64,
        grad,
    })
}

/// Projector contract after unshuffle: `(tokens, vision_dim·factor²) → (tokens, llm_dim)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ProjectorShape {
    pub input_tokens: usize,
    pub input_dim: usize,
    pub output_tokens: usize,
    pub output_dim: usize,
}

pub fn projector_shape(
    vision_dim: usize,
    llm_dim: usize,
    tokens: usize,
    factor: usize,
) -> Result<ProjectorShape, KernelError> {
    if vision_dim == 0 || llm_dim == 0 || tokens == 0 || factor == 0 {
        return Err(KernelError::Shape(
            "projector dimensions must be positive".into(),
        ));
    }
    Ok(ProjectorShape {
        input_tokens: tokens,
        input_dim: vision_dim * factor * factor,
        output_tokens: tokens,
        output_dim: llm_dim,
    })
}

/// Outcome of one check in [`run_kernel_suite`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult {
        name,
        passed,
        detail,
    }
}

/// Largest `|analytic - numeric|` over the gradient, divided by the larger of
/// the two gradients' max-norms. Central differences with step `h`.
pub fn gradient_check(
    student: &HiddenStateStack,
    teacher: &HiddenStateStack,
    h: f64,
) -> Result<f64, KernelError> {
    let analytic = distill_loss(student, teacher)?.grad;
    let mut probe = student.clone();
    let mut numeric = vec![0.0; analytic.len()];
    for (i, slot) in numeric.iter_mut().enumerate() {
        let orig = probe.data[i];
        probe.data[i] = orig + h;
        let up = distill_loss(&probe, teacher)?.loss;
        probe.data[i] = orig - h;
        let down = distill_loss(&probe, teacher)?.loss;
        probe.data[i] = orig;
        *slot = (up - down) / (2.0 * h);
    }
    let max_abs = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let scale = max_abs(&analytic)
        .max(max_abs(&numeric))
        .max(f64::MIN_POSITIVE);
    let worst = analytic
        .iter()
        .zip(&numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    Ok(worst / scale)
}

/// Property suite over seeded random inputs, used by `validate-kernels`.
pub fn run_kernel_suite(seed: u64, stacks: usize, exec: Execution) -> Vec<CheckResult> {
    let mut out = Vec::new();

    let grid = FeatureGrid::new(32, 32, 3, (0..32 * 32 * 3).map(|v| v as f64).collect())
        .expect("static shape");
    match pixel_unshuffle(&grid, 2) {
        Ok(u) => {
            out.push(check(
                "unshuffle_token_count",
                u.tokens() == 256 && u.tokens() * 4 == grid.tokens() && u.channels == 12,
                format!(
                    "{} -> {} tokens, {} channels",
                    grid.tokens(),
                    u.tokens(),
                    u.channels
                ),
            ));
            let back = pixel_shuffle(&u, 2).ok();
            out.push(check(
                "unshuffle_inverse",
                back.as_ref() == Some(&grid),
                "shuffle(unshuffle(x)) == x".into(),
            ));
        }
        Err(e) => out.push(check("unshuffle_token_count", false, e.to_string())),
    }

    let results = map_range(stacks, exec, |i| {
        let s = HiddenStateStack::random(
            2,
            3,
            4,
            rng::derive_seed(seed, "kernels/student", &i.to_string()),
        );
        let t = HiddenStateStack::random(
            2,
            3,
            4,
            rng::derive_seed(seed, "kernels/teacher", &i.to_string()),
        );
        let self_loss = distill_loss(&s, &s).map(|o| o.loss);
        let grad_err = gradient_check(&s, &t, 1e-4);
        let base = distill_loss(&s, &t).map(|o| o.loss);
        let swapped = distill_loss(&t, &s).map(|o| o.loss);
        let mut scaled = s.clone();
        for (j, v) in scaled.data.iter_mut().enumerate() {
            // per-vector positive scale factors
            *v *= 0.5 + (j / s.dim) as f64 * 0.75;
        }
        let scaled_loss = distill_loss(&scaled, &t).map(|o| o.loss);
        (self_loss, grad_err, base, swapped, scaled_loss)
    });

    let mut worst_self = 0.0f64;
    let mut worst_grad = 0.0f64;
    let mut worst_sym = 0.0f64;
    let mut worst_scale = 0.0f64;
    let mut errors = Vec::new();
    for r in &results {
        match r {
            (Ok(sl), Ok(ge), Ok(b), Ok(sw), Ok(sc)) => {
                worst_self = worst_self.max((sl + 1.0).abs());
                worst_grad = worst_grad.max(*ge);
                worst_sym = worst_sym.max((b - sw).abs());
                worst_scale = worst_scale.max((b - sc).abs());
                if !(-1.0..=1.0).contains(b) {
                    errors.push(format!("loss {b} outside [-1, 1]"));
                }
            }
            _ => errors.push("kernel error on random stack".into()),
        }
    }
    out.push(check(
        "loss_identical_is_minus_one",
        worst_self == 0.0 && errors.is_empty(),
        format!("max |loss + 1| = {worst_self:.3e}"),
    ));
    out.push(check(
        "gradient_matches_central_differences",
        worst_grad < 1e-5 && errors.is_empty(),
        format!("max relative error = {worst_grad:.3e} over {stacks} stacks"),
    ));
    out.push(check(
        "loss_symmetric",
        worst_sym <= 1e-12,
        format!("max |L(s,t) - L(t,s)| = {worst_sym:.3e}"),
    ));
    out.push(check(
        "loss_scale_invariant",
        worst_scale <= 1e-12,
        format!("max deviation = {worst_scale:.3e}"),
    ));
    if !errors.is_empty() {
        out.push(check("kernel_errors", false, errors.join("; ")));
    }
    out
}
