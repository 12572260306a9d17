//! Decoder Jacobians and the contractive codelength bounds, which charge
//! `1/2 log det` of the Gauss-Newton curvature of the decoder around the
//! feature mean.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::codelength::{reconstruction_error, Decoder};
use crate::error::{Error, Result};
use crate::linalg::{log_det_spd, LN_2PI};
use crate::priors::Prior;

/// `J[k][i] = d x_hat_k / d y_i`, shape `(dim X, dim Y)`.
pub type Jacobian = DMatrix<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContractiveVariant {
    /// Diagonal of the Gauss-Newton matrix only.
    Diag,
    /// The full Gauss-Newton matrix.
    Full,
}

/// Exact Jacobian, one backpropagation per output unit.
pub fn decoder_jacobian(dec: &Decoder, y0: &[f64]) -> Result<Jacobian> {
    let record = dec.net.forward(y0)?;
    let (dx, dy) = (dec.data_dim(), dec.feature_dim());
    let mut j = DMatrix::zeros(dx, dy);
    let mut seed = vec![0.0; dx];
    for k in 0..dx {
        seed[k] = 1.0;
        let g = dec.net.backprop(&record, &seed)?;
        seed[k] = 0.0;
        for (i, v) in g.inputs.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    location: format!("jacobian entry ({k}, {i})"),
                    value: *v,
                });
            }
            j[(k, i)] = *v;
        }
    }
    Ok(j)
}

pub(crate) fn gaussian_variances<'a>(prior: &'a Prior, dim: usize, what: &'static str) -> Result<&'a [f64]> {
    let var = prior
        .variances()
        .ok_or_else(|| Error::Unsupported(format!("{what} needs a Gaussian prior")))?;
    if var.len() != dim {
        return Err(Error::dim(what, dim, var.len()));
    }
    Ok(var)
}

/// `diag(1/lambda) + J^T diag(1/sigma^2) J`.
pub fn gauss_newton_matrix(var: &[f64], precisions: &[f64], j: &Jacobian) -> DMatrix<f64> {
    let d = j.ncols();
    let mut h = DMatrix::zeros(d, d);
    for a in 0..d {
        for b in a..d {
            let v: f64 = (0..j.nrows()).map(|k| precisions[k] * j[(k, a)] * j[(k, b)]).sum();
            h[(a, b)] = v;
            h[(b, a)] = v;
        }
        h[(a, a)] += 1.0 / var[a];
    }
    h
}

/// `1/2 log det` of the curvature (or of its diagonal) minus `d/2 log 2 pi`:
/// the part of the contractive bound that depends on the Jacobian.
pub fn contractive_penalty(prior: &Prior, dec: &Decoder, y0: &[f64], variant: ContractiveVariant) -> Result<f64> {
    let var = gaussian_variances(prior, dec.feature_dim(), "contractive penalty")?;
    let j = decoder_jacobian(dec, y0)?;
    let h = gauss_newton_matrix(var, &dec.output.precisions(), &j);
    let d = var.len() as f64;
    let half_log_det = match variant {
        ContractiveVariant::Diag => 0.5 * h.diagonal().iter().map(|v| v.ln()).sum::<f64>(),
        ContractiveVariant::Full => 0.5 * log_det_spd(&h)?,
    };
    Ok(half_log_det - 0.5 * d * LN_2PI)
}

/// `L_rec(x) - log rho(y0) + penalty` with `y0` the feature mean.
pub fn contractive_bound(
    prior: &Prior,
    dec: &Decoder,
    y0: &[f64],
    x: &[f64],
    variant: ContractiveVariant,
) -> Result<f64> {
    let penalty = contractive_penalty(prior, dec, y0, variant)?;
    Ok(reconstruction_error(dec, y0, x)? - prior.log_density(y0)? + penalty)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Activation, Network};
    use crate::outvar::OutputModel;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_decoder(seed: u64, sizes: &[usize], act: Activation) -> Decoder {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Network::layered(sizes, act, act).unwrap();
        net.init_weights(1.5, &mut rng);
        let dx = *sizes.last().unwrap();
        Decoder::new(net, OutputModel::fixed(vec![0.6; dx]).unwrap()).unwrap()
    }

    #[test]
    fn linear_jacobian_is_the_weight_matrix() {
        let dec = random_decoder(1, &[3, 2], Activation::Identity);
        let j = decoder_jacobian(&dec, &[0.3, -1.0, 2.0]).unwrap();
        for k in 0..2 {
            for i in 0..3 {
                let e = dec.net.edge_index(1 + i, 4 + k).unwrap();
                assert_eq!(j[(k, i)], dec.net.weights()[e]);
            }
        }
        let mut zero = dec.clone();
        zero.net.weights_mut().iter_mut().for_each(|w| *w = 0.0);
        assert_eq!(decoder_jacobian(&zero, &[0.3, -1.0, 2.0]).unwrap().abs().max(), 0.0);
    }

    #[test]
    fn sigmoid_jacobian_matches_central_differences() {
        let dec = random_decoder(2, &[3, 4, 2], Activation::Sigmoid);
        let y = [0.2, -0.7, 0.5];
        let j = decoder_jacobian(&dec, &y).unwrap();
        let h = 1e-5;
        for i in 0..3 {
            let mut yp = y;
            let mut ym = y;
            yp[i] += h;
            ym[i] -= h;
            let fp = dec.reconstruct(&yp).unwrap();
            let fm = dec.reconstruct(&ym).unwrap();
            for k in 0..2 {
                assert!((j[(k, i)] - (fp[k] - fm[k]) / (2.0 * h)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_jacobian_unit_prior_penalty() {
        let mut dec = random_decoder(3, &[2, 3], Activation::Sigmoid);
        dec.net.weights_mut().iter_mut().for_each(|w| *w = 0.0);
        let prior = Prior::gaussian(vec![1.0, 1.0]).unwrap();
        let p = contractive_penalty(&prior, &dec, &[0.1, 0.2], ContractiveVariant::Diag).unwrap();
        assert!((p + LN_2PI).abs() < 1e-15);
    }

    #[test]
    fn full_is_at_most_diag() {
        let prior = Prior::gaussian(vec![0.8, 1.7, 0.4]).unwrap();
        for seed in 0..100 {
            let dec = random_decoder(100 + seed, &[3, 4], Activation::Identity);
            let y = [0.1, 0.0, -0.3];
            let x = [0.0, 1.0, 0.5, -0.5];
            let diag = contractive_bound(&prior, &dec, &y, &x, ContractiveVariant::Diag).unwrap();
            let full = contractive_bound(&prior, &dec, &y, &x, ContractiveVariant::Full).unwrap();
            assert!(full <= diag + 1e-12, "seed {seed}: {full} > {diag}");
        }
    }

    #[test]
    fn penalty_grows_with_jacobian_magnitude() {
        let prior = Prior::gaussian(vec![1.0]).unwrap();
        let mut last = f64::NEG_INFINITY;
        for &w in &[0.0, 0.5, 1.0, 2.0, 4.0] {
            let net = Network::new(
                vec![Activation::Identity; 3],
                vec![(0, 2, 0.0), (1, 2, w)],
                vec![1],
                vec![2],
            )
            .unwrap();
            let dec = Decoder::new(net, OutputModel::fixed(vec![1.0]).unwrap()).unwrap();
            let p = contractive_penalty(&prior, &dec, &[0.0], ContractiveVariant::Diag).unwrap();
            assert!(p >= last);
            last = p;
        }
    }

    #[test]
    fn discrete_prior_is_rejected() {
        let dec = random_decoder(5, &[2, 2], Activation::Identity);
        let prior = Prior::uniform_binary(2).unwrap();
        assert!(matches!(
            contractive_penalty(&prior, &dec, &[0.0, 1.0], ContractiveVariant::Full),
            Err(Error::Unsupported(_))
        ));
    }
}
