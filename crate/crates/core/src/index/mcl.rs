use crate::domain::dot;

/// Clamp applied to pairwise same-cluster probabilities before the logs.
pub const MCL_EPS: f64 = 1e-7;

fn clamped(s: f64) -> (f64, bool) {
    if s < MCL_EPS {
        (MCL_EPS, false)
    } else if s > 1.0 - MCL_EPS {
        (1.0 - MCL_EPS, false)
    } else {
        (s, true)
    }
}

/// Negative log-likelihood that `q` shares a cluster with the positive and
/// with none of the negatives.
pub fn mcl_loss(prob_q: &[f64], prob_pos: &[f64], prob_negs: &[&[f64]]) -> f64 {
    let (sp, _) = clamped(dot(prob_q, prob_pos));
    let mut loss = -sp.ln();
    for n in prob_negs {
        let (sn, _) = clamped(dot(prob_q, n));
        loss -= (1.0 - sn).ln();
    }
    loss
}

/// Loss and gradients with respect to every probability vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MclGrad {
    pub loss: f64,
    pub d_q: Vec<f64>,
    pub d_pos: Vec<f64>,
    pub d_negs: Vec<Vec<f64>>,
}

/// [`mcl_loss`] together with its gradient. Clamped terms contribute no
/// gradient.
pub fn mcl_loss_grad(prob_q: &[f64], prob_pos: &[f64], prob_negs: &[&[f64]]) -> MclGrad {
    let c = prob_q.len();
    let mut d_q = vec![0.0; c];
    let (sp, live) = clamped(dot(prob_q, prob_pos));
    let mut loss = -sp.ln();
    let mut d_pos = vec![0.0; c];
    if live {
        let g = -1.0 / sp;
        for j in 0..c {
            d_q[j] += g * prob_pos[j];
            d_pos[j] = g * prob_q[j];
        }
    }
    let mut d_negs = Vec::with_capacity(prob_negs.len());
    for n in prob_negs {
        let (sn, live) = clamped(dot(prob_q, n));
        loss -= (1.0 - sn).ln();
        let mut dn = vec![0.0; c];
        if live {
            let g = 1.0 / (1.0 - sn);
            for j in 0..c {
                d_q[j] += g * n[j];
                dn[j] = g * prob_q[j];
            }
        }
        d_negs.push(dn);
    }
    MclGrad {
        loss,
        d_q,
        d_pos,
        d_negs,
    }
}
