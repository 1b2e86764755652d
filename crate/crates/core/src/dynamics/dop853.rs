//! Dormand–Prince 8(5,3) explicit Runge–Kutta pair with PI step control.
//!
//! Steps are clipped so that every requested output time is hit exactly,
//! which avoids dense-output interpolation error entirely.

#![allow(clippy::excessive_precision)]

use crate::error::{Error, Result};

pub const DIM: usize = 4;
pub type Vec4 = [f64; DIM];

#[derive(Debug, Clone, Copy)]
pub struct Dop853Options {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Safety factor on the step-size proposal.
    pub safe: f64,
    /// PI stabilisation exponent (0 gives pure I control).
    pub beta: f64,
    pub fac_min: f64,
    pub fac_max: f64,
}

impl Default for Dop853Options {
    fn default() -> Self {
        Dop853Options {
            rtol: 1e-10,
            atol: 1e-12,
            max_steps: 1_000_000,
            safe: 0.9,
            beta: 0.04,
            fac_min: 0.333,
            fac_max: 6.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Dop853Stats {
    pub accepted: usize,
    pub rejected: usize,
    pub evals: usize,
}

/// Integrates `y' = f(t, y)` from `t0 = grid[0]` and returns the state at every
/// grid time. `check` is called on each accepted state.
pub fn integrate<F, C>(
    f: F,
    y0: Vec4,
    grid: &[f64],
    opts: &Dop853Options,
    mut check: C,
) -> Result<(Vec<Vec4>, Dop853Stats)>
where
    F: Fn(f64, &Vec4) -> Result<Vec4>,
    C: FnMut(f64, &Vec4) -> Result<()>,
{
    let mut stats = Dop853Stats::default();
    let mut out = Vec::with_capacity(grid.len());
    let Some(&t0) = grid.first() else {
        return Ok((out, stats));
    };
    out.push(y0);

    let mut t = t0;
    let mut y = y0;
    let mut k1 = f(t, &y)?;
    stats.evals += 1;
    let span = grid.last().unwrap() - t0;
    let mut h = initial_step(&f, t, &y, &k1, span, opts, &mut stats)?;
    let expo1 = 1.0 / 8.0 - opts.beta * 0.2;
    let mut facold: f64 = 1e-4;
    let mut steps = 0usize;

    for &t_target in &grid[1..] {
        while t < t_target {
            if steps >= opts.max_steps {
                return Err(Error::MaxSteps { t });
            }
            if h.abs() < 1e-14 * t.abs().max(1.0) {
                return Err(Error::StepSizeUnderflow { t });
            }
            steps += 1;

            let remaining = t_target - t;
            let clipped = h >= remaining * (1.0 - 1e-12);
            let h_step = if clipped { remaining } else { h };

            let (y_new, err) = step(&f, t, &y, &k1, h_step, opts, &mut stats)?;

            let fac11 = err.powf(expo1);
            if err <= 1.0 {
                let fac = fac11 / facold.powf(opts.beta);
                let fac = (fac / opts.safe).clamp(1.0 / opts.fac_max, 1.0 / opts.fac_min);
                let h_new = h_step / fac;
                facold = err.max(1e-4);
                stats.accepted += 1;
                t = if clipped { t_target } else { t + h_step };
                y = y_new;
                k1 = f(t, &y)?;
                stats.evals += 1;
                check(t, &y)?;
                h = if clipped { h.max(h_new) } else { h_new };
            } else {
                stats.rejected += 1;
                h = h_step / (fac11 / opts.safe).min(1.0 / opts.fac_min);
            }
        }
        out.push(y);
    }
    Ok((out, stats))
}

/// One trial step: the 8th-order solution and the scaled error norm.
fn step<F>(
    f: &F,
    t: f64,
    y: &Vec4,
    k1: &Vec4,
    h: f64,
    opts: &Dop853Options,
    stats: &mut Dop853Stats,
) -> Result<(Vec4, f64)>
where
    F: Fn(f64, &Vec4) -> Result<Vec4>,
{
    let mut k = [[0.0; DIM]; 12];
    k[0] = *k1;
    for s in 1..12 {
        let row = A[s];
        let mut ys = *y;
        for (j, &a) in row.iter().enumerate().take(s) {
            if a != 0.0 {
                for i in 0..DIM {
                    ys[i] += h * a * k[j][i];
                }
            }
        }
        k[s] = f(t + C[s] * h, &ys)?;
    }
    stats.evals += 11;

    let mut y_new = *y;
    let mut err5 = 0.0;
    let mut err3 = 0.0;
    for i in 0..DIM {
        let mut incr = 0.0;
        let mut e5 = 0.0;
        for s in 0..12 {
            incr += B[s] * k[s][i];
            e5 += ER[s] * k[s][i];
        }
        y_new[i] = y[i] + h * incr;
        let e3 = incr - BHH1 * k[0][i] - BHH2 * k[8][i] - BHH3 * k[11][i];
        let sk = opts.atol + opts.rtol * y[i].abs().max(y_new[i].abs());
        err5 += (e5 / sk).powi(2);
        err3 += (e3 / sk).powi(2);
    }
    let mut deno = err5 + 0.01 * err3;
    if deno <= 0.0 {
        deno = 1.0;
    }
    let err = h.abs() * err5 * (1.0 / (deno * DIM as f64)).sqrt();
    Ok((y_new, err))
}

/// Initial step heuristic from Hairer, Nørsett & Wanner (order 8).
fn initial_step<F>(
    f: &F,
    t: f64,
    y: &Vec4,
    f0: &Vec4,
    span: f64,
    opts: &Dop853Options,
    stats: &mut Dop853Stats,
) -> Result<f64>
where
    F: Fn(f64, &Vec4) -> Result<Vec4>,
{
    let sk: Vec4 = std::array::from_fn(|i| opts.atol + opts.rtol * y[i].abs());
    let norm = |v: &Vec4| (v.iter().zip(&sk).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / DIM as f64).sqrt();
    let d0 = norm(y);
    let d1 = norm(f0);
    let mut h0 = if d0 < 1e-10 || d1 < 1e-10 { 1e-6 } else { 0.01 * d0 / d1 };
    h0 = h0.min(span.abs().max(f64::MIN_POSITIVE));
    let y1: Vec4 = std::array::from_fn(|i| y[i] + h0 * f0[i]);
    let f1 = f(t + h0, &y1)?;
    stats.evals += 1;
    let diff: Vec4 = std::array::from_fn(|i| f1[i] - f0[i]);
    let d2 = norm(&diff) / h0;
    let dmax = d1.max(d2);
    let h1 = if dmax <= 1e-15 {
        (1e-6f64).max(h0 * 1e-3)
    } else {
        (0.01 / dmax).powf(1.0 / 8.0)
    };
    Ok((100.0 * h0).min(h1).min(span.abs().max(f64::MIN_POSITIVE)))
}

const C: [f64; 12] = [
    0.0,
    0.526001519587677318785587544488E-01,
    0.789002279381515978178381316732E-01,
    0.118350341907227396726757197510E+00,
    0.281649658092772603273242802490E+00,
    0.333333333333333333333333333333E+00,
    0.25E+00,
    0.307692307692307692307692307692E+00,
    0.651282051282051282051282051282E+00,
    0.6E+00,
    0.857142857142857142857142857142E+00,
    1.0,
];

const A: [[f64; 11]; 12] = [
    [0.0; 11],
    [5.26001519587677318785587544488E-2, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [
        1.97250569845378994544595329183E-2,
        5.91751709536136983633785987549E-2,
        0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
    ],
    [
        2.95875854768068491816892993775E-2,
        0.0,
        8.87627564304205475450678981324E-2,
        0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
    ],
    [
        2.41365134159266685502369798665E-1,
        0.0,
        -8.84549479328286085344864962717E-1,
        9.24834003261792003115737966543E-1,
        0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
    ],
    [
        3.7037037037037037037037037037E-2,
        0.0,
        0.0,
        1.70828608729473871279604482173E-1,
        1.25467687566822425016691814123E-1,
        0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
    ],
    [
        3.7109375E-2,
        0.0,
        0.0,
        1.70252211019544039314978060272E-1,
        6.02165389804559606850219397283E-2,
        -1.7578125E-2,
        0.0, 0.0, 0.0, 0.0, 0.0,
    ],
    [
        3.70920001185047927108779319836E-2,
        0.0,
        0.0,
        1.70383925712239993810214054705E-1,
        1.07262030446373284651809199168E-1,
        -1.53194377486244017527936158236E-2,
        8.27378916381402288758473766002E-3,
        0.0, 0.0, 0.0, 0.0,
    ],
    [
        6.24110958716075717114429577812E-1,
        0.0,
        0.0,
        -3.36089262944694129406857109825E0,
        -8.68219346841726006818189891453E-1,
        2.75920996994467083049415600797E1,
        2.01540675504778934086186788979E1,
        -4.34898841810699588477366255144E1,
        0.0, 0.0, 0.0,
    ],
    [
        4.77662536438264365890433908527E-1,
        0.0,
        0.0,
        -2.48811461997166764192642586468E0,
        -5.90290826836842996371446475743E-1,
        2.12300514481811942347288949897E1,
        1.52792336328824235832596922938E1,
        -3.32882109689848629194453265587E1,
        -2.03312017085086261358222928593E-2,
        0.0, 0.0,
    ],
    [
        -9.3714243008598732571704021658E-1,
        0.0,
        0.0,
        5.18637242884406370830023853209E0,
        1.09143734899672957818500254654E0,
        -8.14978701074692612513997267357E0,
        -1.85200656599969598641566180701E1,
        2.27394870993505042818970056734E1,
        2.49360555267965238987089396762E0,
        -3.0467644718982195003823669022E0,
        0.0,
    ],
    [
        2.27331014751653820792359768449E0,
        0.0,
        0.0,
        -1.05344954667372501984066689879E1,
        -2.00087205822486249909675718444E0,
        -1.79589318631187989172765950534E1,
        2.79488845294199600508499808837E1,
        -2.85899827713502369474065508674E0,
        -8.87285693353062954433549289258E0,
        1.23605671757943030647266201528E1,
        6.43392746015763530355970484046E-1,
    ],
];

const B: [f64; 12] = [
    5.42937341165687622380535766363E-2,
    0.0,
    0.0,
    0.0,
    0.0,
    4.45031289275240888144113950566E0,
    1.89151789931450038304281599044E0,
    -5.8012039600105847814672114227E0,
    3.1116436695781989440891606237E-1,
    -1.52160949662516078556178806805E-1,
    2.01365400804030348374776537501E-1,
    4.47106157277725905176885569043E-2,
];

const ER: [f64; 12] = [
    0.1312004499419488073250102996E-01,
    0.0,
    0.0,
    0.0,
    0.0,
    -0.1225156446376204440720569753E+01,
    -0.4957589496572501915214079952E+00,
    0.1664377182454986536961530415E+01,
    -0.3503288487499736816886487290E+00,
    0.3341791187130174790297318841E+00,
    0.8192320648511571246570742613E-01,
    -0.2235530786388629525884427845E-01,
];

const BHH1: f64 = 0.244094488188976377952755905512E+00;
const BHH2: f64 = 0.733846688281611857341361741547E+00;
const BHH3: f64 = 0.220588235294117647058823529412E-01;

#[cfg(test)]
mod tests {
    use super::*;

    fn oscillator(_t: f64, y: &Vec4) -> Result<Vec4> {
        Ok([y[1], -y[0], y[3], -4.0 * y[2]])
    }

    #[test]
    fn harmonic_oscillator_matches_closed_form() {
        let grid: Vec<f64> = (0..=100).map(|i| i as f64 * 0.1).collect();
        let (ys, stats) =
            integrate(oscillator, [1.0, 0.0, 0.0, 2.0], &grid, &Dop853Options::default(), |_, _| Ok(()))
                .unwrap();
        for (t, y) in grid.iter().zip(&ys) {
            assert!((y[0] - t.cos()).abs() < 1e-9);
            assert!((y[1] + t.sin()).abs() < 1e-9);
            assert!((y[2] - (2.0 * t).sin()).abs() < 1e-9);
        }
        assert!(stats.accepted > 0);
    }

    #[test]
    fn row_sums_equal_nodes() {
        for s in 1..12 {
            let sum: f64 = A[s].iter().sum();
            assert!((sum - C[s]).abs() < 1e-13, "stage {s}");
        }
        assert!((B.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn weights_reproduce_quadrature_of_order_eight() {
        // sum b_i c_i^q = 1/(q+1) for q < 8.
        for q in 0..8 {
            let s: f64 = B.iter().zip(C).map(|(b, c)| b * c.powi(q)).sum();
            assert!((s - 1.0 / (q + 1) as f64).abs() < 1e-13, "q = {q}");
        }
    }
}
