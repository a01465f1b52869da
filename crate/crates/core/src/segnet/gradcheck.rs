//! Finite-difference check of [`UNet::backward`] under the Dice + BCE loss.

use super::loss::dice_ce_from_logits;
use super::net::UNet;
use super::params::ParamStore;
use super::tensor::Tensor;
use super::Result;
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct GradProbe {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub probes: Vec<GradProbe>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.probes.iter().map(|p| p.rel_error).fold(0.0, f64::max)
    }
}

/// `|a - n| / max(|a|, |n|, floor)`; the floor keeps exact zeros from dividing by zero.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn loss(net: &UNet, params: &ParamStore<f64>, x: &Tensor<f64>, target: &Tensor<f64>) -> Result<f64> {
    let (logits, _) = net.forward(params, x)?;
    Ok(dice_ce_from_logits(&logits, target).0)
}

/// Central differences with step `h` on `n_probes` scalars.
///
/// The first probe of every parameter tensor is its largest-gradient entry, so
/// each layer is covered; remaining probes are drawn uniformly at random.
pub fn gradient_check<R: Rng + ?Sized>(
    net: &UNet,
    params: &ParamStore<f64>,
    x: &Tensor<f64>,
    target: &Tensor<f64>,
    n_probes: usize,
    h: f64,
    rng: &mut R,
) -> Result<GradCheckReport> {
    let (logits, cache) = net.forward(params, x)?;
    let (_, dlogits) = dice_ce_from_logits(&logits, target);
    let mut grads = params.zeros_like();
    net.backward(params, &mut grads, cache, &dlogits);

    let sizes: Vec<usize> = grads.iter().map(|p| p.data.len()).collect();
    let mut picks: Vec<(usize, usize)> = grads
        .iter()
        .enumerate()
        .map(|(t, p)| {
            let i = (0..p.data.len()).max_by(|&a, &b| p.data[a].abs().total_cmp(&p.data[b].abs())).unwrap_or(0);
            (t, i)
        })
        .collect();
    let total: usize = sizes.iter().sum();
    while picks.len() < n_probes {
        let mut k = rng.random_range(0..total);
        let t = sizes.iter().position(|&s| if k < s { true } else { k -= s; false }).expect("k < total");
        if !picks.contains(&(t, k)) {
            picks.push((t, k));
        }
    }

    let mut work = params.clone();
    let mut probes = Vec::with_capacity(picks.len());
    for (t, i) in picks {
        let orig = params.iter().nth(t).expect("tensor index").data[i];
        let set = |w: &mut ParamStore<f64>, v: f64| w.iter_mut().nth(t).expect("tensor index").data[i] = v;
        set(&mut work, orig + h);
        let up = loss(net, &work, x, target)?;
        set(&mut work, orig - h);
        let down = loss(net, &work, x, target)?;
        set(&mut work, orig);
        let numeric = (up - down) / (2.0 * h);
        let g = grads.iter().nth(t).expect("tensor index");
        let analytic = g.data[i];
        probes.push(GradProbe {
            param: g.name.clone(),
            index: i,
            analytic,
            numeric,
            rel_error: relative_error(analytic, numeric, 1e-7),
        });
    }
    Ok(GradCheckReport { probes })
}
