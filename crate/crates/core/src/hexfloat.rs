//! C99-style hexadecimal float literals (`0x1.8p-1`), exact for every finite f64.

use crate::error::{Error, Result};

pub fn format(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let bits = x.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let exp_bits = ((bits >> 52) & 0x7ff) as i64;
    let mut mant = bits & ((1u64 << 52) - 1);
    if exp_bits == 0 && mant == 0 {
        return format!("{sign}0x0p+0");
    }
    let (lead, exp) = if exp_bits == 0 { (0, -1022) } else { (1, exp_bits - 1023) };
    if mant == 0 {
        return format!("{sign}0x{lead}p{exp:+}");
    }
    let mut digits = 13;
    while mant & 0xf == 0 {
        mant >>= 4;
        digits -= 1;
    }
    format!("{sign}0x{lead}.{mant:0digits$x}p{exp:+}")
}

pub fn parse(s: &str) -> Result<f64> {
    let t = s.trim();
    let err = || Error::Parse(format!("bad hex float `{t}`"));
    match t {
        "nan" => return Ok(f64::NAN),
        "inf" => return Ok(f64::INFINITY),
        "-inf" => return Ok(f64::NEG_INFINITY),
        _ => {}
    }
    let (neg, body) = match t.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, t.strip_prefix('+').unwrap_or(t)),
    };
    let body = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")).ok_or_else(err)?;
    let (mant_s, exp_s) = body.split_once(['p', 'P']).ok_or_else(err)?;
    let exp: i32 = exp_s.parse().map_err(|_| err())?;
    let (int_s, frac_s) = mant_s.split_once('.').unwrap_or((mant_s, ""));
    if int_s.is_empty() || frac_s.len() > 13 {
        return Err(err());
    }
    let int = u64::from_str_radix(int_s, 16).map_err(|_| err())?;
    let frac = if frac_s.is_empty() { 0 } else { u64::from_str_radix(frac_s, 16).map_err(|_| err())? };
    // value = (int + frac / 16^len) * 2^exp, assembled exactly in two steps
    let frac_val = frac as f64 * 2f64.powi(-4 * frac_s.len() as i32);
    let v = (int as f64 + frac_val) * 2f64.powi(exp.max(-1022)) * 2f64.powi((exp + 1022).min(0));
    Ok(if neg { -v } else { v })
}
