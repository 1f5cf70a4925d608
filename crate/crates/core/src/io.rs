//! Quote files (CSV) and model files (JSON).

use crate::black::{black_price, implied_vol, BlackInputs};
use crate::error::{LlvgError, Result};
use crate::pdde::{LVGSlice, SliceDocument, SLICE_SCHEMA};
use crate::surface::{MarketSlice, SurfaceDocument, SurfaceModel, SURFACE_SCHEMA};
use std::io::{Read, Write};

pub const QUOTE_COLUMNS: [&str; 9] = [
    "maturity", "strike", "vol", "price", "bid", "ask", "weight", "forward", "discount",
];

/// One row of a quote file. `price`, `bid` and `ask` are discounted call
/// prices.
#[derive(Debug, Clone, PartialEq)]
pub struct QuoteRow {
    pub maturity: f64,
    pub strike: f64,
    pub vol: Option<f64>,
    pub price: Option<f64>,
    pub bid: Option<f64>,
    pub ask: Option<f64>,
    pub weight: Option<f64>,
    pub forward: f64,
    pub discount: f64,
}

fn positional(line: u64, column: usize, name: &str, msg: impl std::fmt::Display) -> LlvgError {
    LlvgError::Parse(format!("line {line}, column {column} ({name}): {msg}"))
}

/// Parses a quote file. Columns are matched by header name in any order;
/// `vol`, `price`, `bid`, `ask` and `weight` may be absent or empty.
pub fn read_quotes<R: Read>(reader: R) -> Result<Vec<QuoteRow>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| LlvgError::Parse(format!("line 1: {e}")))?
        .clone();
    if headers.is_empty() {
        return Err(LlvgError::Parse("line 1: empty file, expected a header".into()));
    }
    let mut index = [None; 9];
    for (c, h) in headers.iter().enumerate() {
        match QUOTE_COLUMNS.iter().position(|&n| n.eq_ignore_ascii_case(h)) {
            Some(k) if index[k].is_some() => {
                return Err(positional(1, c + 1, h, "duplicate column"));
            }
            Some(k) => index[k] = Some(c),
            None => return Err(positional(1, c + 1, h, "unknown column")),
        }
    }
    for required in [0, 1, 7, 8] {
        if index[required].is_none() {
            return Err(LlvgError::Parse(format!(
                "line 1: missing column '{}'",
                QUOTE_COLUMNS[required]
            )));
        }
    }
    if index[2].is_none() && index[3].is_none() {
        return Err(LlvgError::Parse("line 1: need a 'vol' or a 'price' column".into()));
    }
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            LlvgError::Parse(format!("line {line}: {e}"))
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |k: usize| -> Result<Option<f64>> {
            let Some(c) = index[k] else { return Ok(None) };
            let raw = record.get(c).unwrap_or("");
            if raw.is_empty() {
                return Ok(None);
            }
            let v: f64 = raw
                .parse()
                .map_err(|_| positional(line, c + 1, QUOTE_COLUMNS[k], format!("'{raw}' is not a number")))?;
            if !v.is_finite() {
                return Err(positional(line, c + 1, QUOTE_COLUMNS[k], "value must be finite"));
            }
            Ok(Some(v))
        };
        let required = |k: usize| -> Result<f64> {
            field(k)?.ok_or_else(|| positional(line, index[k].unwrap() + 1, QUOTE_COLUMNS[k], "value required"))
        };
        let positive = |k: usize, v: f64| -> Result<f64> {
            if v > 0.0 {
                Ok(v)
            } else {
                Err(positional(
                    line,
                    index[k].unwrap() + 1,
                    QUOTE_COLUMNS[k],
                    "value must be positive",
                ))
            }
        };
        let row = QuoteRow {
            maturity: positive(0, required(0)?)?,
            strike: positive(1, required(1)?)?,
            vol: field(2)?,
            price: field(3)?,
            bid: field(4)?,
            ask: field(5)?,
            weight: field(6)?,
            forward: positive(7, required(7)?)?,
            discount: positive(8, required(8)?)?,
        };
        if row.vol.is_none() && row.price.is_none() {
            let c = index[2].or(index[3]).unwrap() + 1;
            return Err(positional(line, c, "vol/price", "one of vol or price is required"));
        }
        if let Some(w) = row.weight {
            if w < 0.0 {
                return Err(positional(
                    line,
                    index[6].unwrap() + 1,
                    "weight",
                    "weight must be non-negative",
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(LlvgError::Parse("no quotes in file".into()));
    }
    Ok(rows)
}

/// Shortest decimal that parses back to the same value.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v:?}")
    }
}

pub fn write_quotes<W: Write>(writer: W, rows: &[QuoteRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| LlvgError::Parse(format!("write failed: {e}"));
    w.write_record(QUOTE_COLUMNS).map_err(io)?;
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    for r in rows {
        w.write_record([
            fmt_f64(r.maturity),
            fmt_f64(r.strike),
            opt(r.vol),
            opt(r.price),
            opt(r.bid),
            opt(r.ask),
            opt(r.weight),
            fmt_f64(r.forward),
            fmt_f64(r.discount),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| LlvgError::Parse(format!("write failed: {e}")))
}

/// Groups rows by maturity (ascending) and strike. A maturity is quoted in
/// prices when every row has one, otherwise in volatilities, with prices
/// converted where the volatility is missing. Rows with bid and ask but no
/// weight get unit weight.
pub fn rows_to_slices(rows: &[QuoteRow]) -> Result<Vec<MarketSlice>> {
    let mut sorted: Vec<&QuoteRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.maturity.total_cmp(&b.maturity).then(a.strike.total_cmp(&b.strike)));
    let mut out: Vec<MarketSlice> = Vec::new();
    for group in sorted.chunk_by(|a, b| a.maturity == b.maturity) {
        let t = group[0].maturity;
        let (forward, discount) = (group[0].forward, group[0].discount);
        if group.iter().any(|r| r.forward != forward || r.discount != discount) {
            return Err(LlvgError::InvalidInput(format!(
                "maturity {t}: forward and discount must agree across rows"
            )));
        }
        if group.windows(2).any(|w| w[0].strike == w[1].strike) {
            return Err(LlvgError::InvalidInput(format!("maturity {t}: duplicate strike")));
        }
        let all_prices = group.iter().all(|r| r.price.is_some());
        let vols = group
            .iter()
            .map(|r| match (r.vol, r.price) {
                (Some(v), _) => Ok(v),
                (None, Some(p)) => implied_vol(p / discount, forward, r.strike, t, true),
                (None, None) => unreachable!("checked on parse"),
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(MarketSlice {
            maturity: t,
            strikes: group.iter().map(|r| r.strike).collect(),
            vols,
            prices: all_prices.then(|| group.iter().map(|r| r.price.unwrap()).collect()),
            mu: group.iter().map(|r| r.weight.unwrap_or(1.0)).collect(),
            forward,
            discount,
        });
    }
    Ok(out)
}

/// Inverse bid-ask spreads in undiscounted price units, or `None` unless
/// every row of the slice has a positive spread.
pub fn spread_weights(rows: &[QuoteRow], maturity: f64) -> Option<Vec<f64>> {
    let mut sel: Vec<&QuoteRow> = rows.iter().filter(|r| r.maturity == maturity).collect();
    sel.sort_by(|a, b| a.strike.total_cmp(&b.strike));
    sel.iter()
        .map(|r| match (r.bid, r.ask) {
            (Some(b), Some(a)) if a > b => Some(r.discount / (a - b)),
            _ => None,
        })
        .collect()
}

/// Rows of a slice with both volatility and discounted price filled in.
pub fn slice_to_rows(ms: &MarketSlice) -> Result<Vec<QuoteRow>> {
    (0..ms.strikes.len())
        .map(|i| {
            let price = match &ms.prices {
                Some(p) => p[i],
                None => {
                    ms.discount
                        * black_price(&BlackInputs::new(
                            ms.forward,
                            ms.strikes[i],
                            ms.vols[i],
                            ms.maturity,
                            true,
                        ))?
                }
            };
            Ok(QuoteRow {
                maturity: ms.maturity,
                strike: ms.strikes[i],
                vol: Some(ms.vols[i]),
                price: Some(price),
                bid: None,
                ask: None,
                weight: Some(ms.mu[i]),
                forward: ms.forward,
                discount: ms.discount,
            })
        })
        .collect()
}

/// A model file: one slice or a surface.
#[derive(Debug, Clone)]
pub enum ModelFile {
    Slice(LVGSlice),
    Surface(SurfaceModel),
}

pub fn read_model(text: &str) -> Result<ModelFile> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| LlvgError::Parse(format!("invalid JSON: {e}")))?;
    let schema = value
        .get("schema")
        .and_then(|s| s.as_str())
        .unwrap_or_default()
        .to_string();
    let bad = |e: serde_json::Error| LlvgError::Parse(format!("invalid {schema} document: {e}"));
    match schema.as_str() {
        SLICE_SCHEMA => {
            let doc: SliceDocument = serde_json::from_value(value).map_err(bad)?;
            Ok(ModelFile::Slice(LVGSlice::from_document(&doc, None)?))
        }
        SURFACE_SCHEMA => {
            let doc: SurfaceDocument = serde_json::from_value(value).map_err(bad)?;
            Ok(ModelFile::Surface(SurfaceModel::from_document(&doc)?))
        }
        other => Err(LlvgError::Parse(format!(
            "unknown schema '{other}', expected '{SLICE_SCHEMA}' or '{SURFACE_SCHEMA}'"
        ))),
    }
}

pub fn write_model(model: &ModelFile) -> Result<String> {
    let text = match model {
        ModelFile::Slice(s) => serde_json::to_string_pretty(&s.to_document()),
        ModelFile::Surface(s) => serde_json::to_string_pretty(&s.to_document()),
    };
    text.map_err(|e| LlvgError::Parse(format!("cannot serialize model: {e}")))
}
