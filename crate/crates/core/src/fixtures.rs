//! Embedded quote sets used by the reproduction runner and the tests.

use crate::calibration::QuoteSlice;
use crate::surface::MarketSlice;

pub const CASE_MATURITY: f64 = 5.0722;

/// Moneyness and implied volatility columns (Case I, Case II) of a
/// five-year smile computed from a local stochastic volatility model.
pub const CASE_TABLE: [(f64, f64, f64); 21] = [
    (0.035123777453185, 0.642412798191439, 0.649712512502887),
    (0.049095433048156, 0.621682849924325, 0.629372247414191),
    (0.068624781300891, 0.590577891369241, 0.598339248024188),
    (0.095922580089594, 0.553137221952525, 0.560748840467284),
    (0.134078990076508, 0.511398042127817, 0.518685454812697),
    (0.18741338653678, 0.466699250819768, 0.473512707134552),
    (0.261963320525776, 0.420225808661573, 0.426434688827871),
    (0.366167980681693, 0.373296313420122, 0.378806875802102),
    (0.511823524787378, 0.327557513727855, 0.332366264644264),
    (0.715418426368358, 0.285106482185545, 0.289407658380454),
    (1.0, 0.249328882881654, 0.253751752243855),
    (1.39778339939642, 0.228967051575314, 0.235378088110653),
    (1.95379843162821, 0.220857187809035, 0.235343538571543),
    (2.73098701349666, 0.218762825294675, 0.260395028879884),
    (3.81732831143284, 0.218742183617652, 0.31735041252779),
    (5.33579814376678, 0.218432406892364, 0.368205175099723),
    (7.45829006788743, 0.217198426268117, 0.417582432865276),
    (10.4250740447762, 0.21573928902421, 0.46323707706565),
    (14.5719954372667, 0.214619929462215, 0.504386489988866),
    (20.3684933182917, 0.2141074555437, 0.539752566560924),
    (28.4707418310251, 0.21457985392644, 0.566370957381163),
];

fn case(column: usize) -> QuoteSlice {
    let strikes = CASE_TABLE.iter().map(|r| r.0).collect();
    let vols = CASE_TABLE.iter().map(|r| if column == 1 { r.1 } else { r.2 }).collect();
    QuoteSlice::new(strikes, vols, vec![1.0; CASE_TABLE.len()], 1.0, CASE_MATURITY).expect("valid fixture")
}

pub fn case1() -> QuoteSlice {
    case(1)
}

pub fn case2() -> QuoteSlice {
    case(2)
}

pub const BLACKFLAT_VOL: f64 = 0.2;
pub const BLACKFLAT_MATURITY: f64 = 0.25;
pub const BLACKFLAT_FORWARD: f64 = 1.025;
pub const BLACKFLAT_STRIKES: [f64; 10] = [0.85, 0.90, 0.95, 1.0, 1.05, 1.1, 1.15, 1.2, 1.3, 1.4];

/// Flat 20% Black volatility with the forward between two strikes.
pub fn blackflat() -> QuoteSlice {
    let n = BLACKFLAT_STRIKES.len();
    QuoteSlice::new(
        BLACKFLAT_STRIKES.to_vec(),
        vec![BLACKFLAT_VOL; n],
        vec![1.0; n],
        BLACKFLAT_FORWARD,
        BLACKFLAT_MATURITY,
    )
    .expect("valid fixture")
}

pub const KAHALE_SPOT: f64 = 590.0;
pub const KAHALE_RATE: f64 = 0.06;
pub const KAHALE_DIVIDEND: f64 = 0.0262;
/// Strikes as fractions of the spot.
pub const KAHALE_MONEYNESS: [f64; 10] = [0.85, 0.90, 0.95, 1.00, 1.05, 1.10, 1.15, 1.20, 1.30, 1.40];
pub const KAHALE_MATURITIES: [f64; 10] = [0.175, 0.425, 0.695, 0.94, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0];
/// SPX500 implied volatilities of October 1995, one row per maturity.
pub const KAHALE_VOLS: [[f64; 10]; 10] = [
    [0.190, 0.168, 0.133, 0.113, 0.102, 0.097, 0.120, 0.142, 0.169, 0.200],
    [0.177, 0.155, 0.138, 0.125, 0.109, 0.103, 0.100, 0.114, 0.13, 0.150],
    [0.172, 0.157, 0.144, 0.133, 0.118, 0.104, 0.100, 0.101, 0.108, 0.124],
    [0.171, 0.159, 0.149, 0.137, 0.127, 0.113, 0.106, 0.103, 0.100, 0.110],
    [0.171, 0.159, 0.150, 0.138, 0.128, 0.115, 0.107, 0.103, 0.099, 0.108],
    [0.169, 0.160, 0.151, 0.142, 0.133, 0.124, 0.119, 0.113, 0.107, 0.102],
    [0.169, 0.161, 0.153, 0.145, 0.137, 0.13, 0.126, 0.119, 0.115, 0.111],
    [0.168, 0.161, 0.155, 0.149, 0.143, 0.137, 0.133, 0.128, 0.124, 0.123],
    [0.168, 0.162, 0.157, 0.152, 0.148, 0.143, 0.139, 0.135, 0.13, 0.128],
    [0.168, 0.164, 0.159, 0.154, 0.151, 0.148, 0.144, 0.14, 0.136, 0.132],
];

pub fn kahale() -> Vec<MarketSlice> {
    KAHALE_MATURITIES
        .iter()
        .zip(KAHALE_VOLS.iter())
        .map(|(&t, vols)| MarketSlice {
            maturity: t,
            strikes: KAHALE_MONEYNESS.iter().map(|p| p * KAHALE_SPOT).collect(),
            vols: vols.to_vec(),
            prices: None,
            mu: vec![1.0; vols.len()],
            forward: KAHALE_SPOT * ((KAHALE_RATE - KAHALE_DIVIDEND) * t).exp(),
            discount: (-KAHALE_RATE * t).exp(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fixture {
    Case1,
    Case2,
    Kahale,
    BlackFlat,
}

impl Fixture {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "case1" => Some(Self::Case1),
            "case2" => Some(Self::Case2),
            "kahale" => Some(Self::Kahale),
            "blackflat" => Some(Self::BlackFlat),
            _ => None,
        }
    }

    /// The fixture as real-asset slices (single-maturity fixtures have a
    /// unit discount factor).
    pub fn market_slices(self) -> Vec<MarketSlice> {
        let single = |q: QuoteSlice| MarketSlice {
            maturity: q.tau,
            strikes: q.strikes,
            vols: q.vols,
            prices: None,
            mu: q.mu,
            forward: q.forward,
            discount: 1.0,
        };
        match self {
            Self::Case1 => vec![single(case1())],
            Self::Case2 => vec![single(case2())],
            Self::BlackFlat => vec![single(blackflat())],
            Self::Kahale => kahale(),
        }
    }
}
