//! CSV field dumps and the wave reader used by `audit`.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::clock::ClockField;
use crate::dynamics::{BranchField, FanSlice};
use crate::error::{Error, Result};
use crate::model::{Axis, ComplexField, PhysicalSetup, TimeAxis, WaveField};
use crate::oracle::bohm_potential;

#[derive(Debug, Serialize)]
struct CharacteristicRow {
    lambda: f64,
    t: f64,
    x: f64,
    p: f64,
    #[serde(rename = "S")]
    s: f64,
    #[serde(rename = "D")]
    d: f64,
    #[serde(rename = "J")]
    j: f64,
}

/// Streams `(lambda, t, x, p, S, D, J)` rows, keeping every `stride`-th
/// characteristic.
pub struct CharacteristicsWriter<W: Write> {
    inner: csv::Writer<W>,
    stride: usize,
}

impl CharacteristicsWriter<File> {
    pub fn create(path: &Path, stride: usize) -> Result<Self> {
        Ok(Self::new(File::create(path)?, stride))
    }
}

impl<W: Write> CharacteristicsWriter<W> {
    pub fn new(w: W, stride: usize) -> Self {
        CharacteristicsWriter {
            inner: csv::Writer::from_writer(w),
            stride: stride.max(1),
        }
    }

    pub fn write_slice(&mut self, slice: &FanSlice) -> Result<()> {
        for s in slice.samples.iter().step_by(self.stride) {
            self.inner.serialize(CharacteristicRow {
                lambda: s.lambda,
                t: slice.t,
                x: s.x,
                p: s.p,
                s: s.s,
                d: s.d,
                j: s.j,
            })?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush()?;
        self.inner.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct WaveRow {
    pub t: f64,
    pub x: f64,
    pub re_psi: f64,
    pub im_psi: f64,
    pub abs2_psi: f64,
}

#[derive(Debug, Serialize)]
struct PropagatorRow {
    t: f64,
    x: f64,
    re_psi: f64,
    im_psi: f64,
    abs2_psi: f64,
    branch_count: u32,
}

/// `(t, x, re_psi, im_psi, abs2_psi, branch_count)` for valid nodes of every
/// `time_stride`-th slice.
pub fn write_propagator_csv<W: Write>(w: W, field: &ComplexField, branch_count: &[u32], time_stride: usize) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for k in (0..field.time.n).step_by(time_stride.max(1)) {
        let t = field.time.time(k);
        for i in 0..field.axis.n {
            if !field.is_valid(k, i) {
                continue;
            }
            let z = field.at(k, i);
            out.serialize(PropagatorRow {
                t,
                x: field.axis.node(i),
                re_psi: z.re,
                im_psi: z.im,
                abs2_psi: z.norm_sqr(),
                branch_count: branch_count[field.index(k, i)],
            })?;
        }
    }
    out.flush()?;
    Ok(())
}

/// `(t, x, re_psi, im_psi, abs2_psi)` for valid nodes.
pub fn write_wave_csv<W: Write>(w: W, field: &WaveField, time_stride: usize) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for k in (0..field.time.n).step_by(time_stride.max(1)) {
        let t = field.time.time(k);
        for i in 0..field.axis.n {
            if !field.is_valid(k, i) {
                continue;
            }
            let z = field.at(k, i);
            out.serialize(WaveRow {
                t,
                x: field.axis.node(i),
                re_psi: z.re,
                im_psi: z.im,
                abs2_psi: z.norm_sqr(),
            })?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct ClockRow {
    lambda: f64,
    t: f64,
    t_prime: f64,
    rho: f64,
    rho_formula: f64,
}

/// `(lambda, t, t_prime, rho, rho_formula)` over valid clock samples.
pub fn write_clock_csv<W: Write>(w: W, clock: &ClockField, stride: usize) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for tr in clock.tracks.iter().step_by(stride.max(1)) {
        for k in 0..tr.t.len() {
            if !tr.valid[k] {
                continue;
            }
            out.serialize(ClockRow {
                lambda: tr.lambda,
                t: tr.t[k],
                t_prime: tr.t_prime[k],
                rho: tr.rho[k],
                rho_formula: tr.rho_formula[k],
            })?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub schrodinger_l2: Option<f64>,
    pub bohm_max: Option<f64>,
    pub l2_vs_oracle: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepOrders {
    pub schrodinger_l2: Option<f64>,
    pub bohm_max: Option<f64>,
    pub l2_vs_oracle: Option<f64>,
}

/// Sweep table followed by one `fitted_order` row.
pub fn write_sweep_csv<W: Write>(w: W, rows: &[SweepRow], orders: &SweepOrders) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["value", "schrodinger_l2", "bohm_max", "l2_vs_oracle"])?;
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        out.write_record([r.value.to_string(), cell(r.schrodinger_l2), cell(r.bohm_max), cell(r.l2_vs_oracle)])?;
    }
    out.write_record([
        "fitted_order".to_string(),
        cell(orders.schrodinger_l2),
        cell(orders.bohm_max),
        cell(orders.l2_vs_oracle),
    ])?;
    out.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct BohmRow<'a> {
    t: f64,
    x: f64,
    series: &'a str,
    q: f64,
}

/// `(t, x, series, q)`: Bohm potential per branch (`branch_<j>`) and of the
/// Madelung density of `wave` (`madelung`), on the listed slices.
pub fn write_bohm_profile_csv<W: Write>(
    w: W,
    setup: &PhysicalSetup,
    branches: &[BranchField],
    wave: Option<&WaveField>,
    slices: &[usize],
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for b in branches {
        let name = format!("branch_{}", b.index);
        let n = b.axis.n;
        for &k in slices {
            let Some(s) = b.slices.get(k) else { continue };
            if s.len() < 3 || s.rho.len() != s.len() {
                continue;
            }
            let mut rho = vec![0.0; n];
            let mut valid = vec![false; n];
            for loc in 0..s.len() {
                rho[s.first + loc] = s.rho[loc];
                valid[s.first + loc] = s.valid[loc];
            }
            let Ok(q) = bohm_potential(&rho, &valid, &b.axis, setup) else { continue };
            for i in 0..n {
                if q.valid[i] {
                    out.serialize(BohmRow {
                        t: b.time.time(k),
                        x: b.axis.node(i),
                        series: &name,
                        q: q.values[i],
                    })?;
                }
            }
        }
    }
    if let Some(wave) = wave {
        for k in 0..wave.time.n {
            let rho: Vec<f64> = wave.slice(k).iter().map(|z| z.norm_sqr()).collect();
            let Ok(q) = bohm_potential(&rho, wave.valid_slice(k), &wave.axis, setup) else { continue };
            for i in 0..wave.axis.n {
                if q.valid[i] {
                    out.serialize(BohmRow {
                        t: wave.time.time(k),
                        x: wave.axis.node(i),
                        series: "madelung",
                        q: q.values[i],
                    })?;
                }
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct InputRow {
    t: f64,
    x: f64,
    re_psi: f64,
    im_psi: f64,
}

fn uniform_axis(mut v: Vec<f64>, what: &str) -> Result<(f64, f64, usize)> {
    v.sort_by(f64::total_cmp);
    v.dedup();
    if v.len() < 2 {
        return Err(Error::Parse(format!("{what}: need at least two distinct values")));
    }
    let step = (v[v.len() - 1] - v[0]) / (v.len() - 1) as f64;
    for (k, x) in v.iter().enumerate() {
        if (x - (v[0] + k as f64 * step)).abs() > 1e-6 * step {
            return Err(Error::Parse(format!("{what}: values are not uniformly spaced")));
        }
    }
    Ok((v[0], step, v.len()))
}

/// Read `(t, x, re_psi, im_psi[, abs2_psi])` rows into a field on the uniform
/// grid they span. Absent nodes are invalid.
pub fn read_wave_csv<R: Read>(r: R) -> Result<WaveField> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    for need in ["t", "x", "re_psi", "im_psi"] {
        if !headers.iter().any(|h| h == need) {
            return Err(Error::Parse(format!("wave CSV lacks column `{need}`")));
        }
    }
    let rows: Vec<InputRow> = rdr.deserialize().collect::<std::result::Result<_, _>>()?;
    if rows.iter().any(|r| !(r.t.is_finite() && r.x.is_finite())) {
        return Err(Error::Parse("non-finite t or x".into()));
    }
    let (t0, dt, nt) = uniform_axis(rows.iter().map(|r| r.t).collect(), "t")?;
    let (x0, h, nx) = uniform_axis(rows.iter().map(|r| r.x).collect(), "x")?;
    let axis = Axis::new(x0, x0 + h * (nx - 1) as f64, nx)?;
    let time = TimeAxis::new(t0, dt, nt)?;
    let mut field = WaveField::zeros(axis, time);
    for r in rows {
        let k = ((r.t - t0) / dt).round() as usize;
        let i = ((r.x - x0) / h).round() as usize;
        field.set(k, i, Complex64::new(r.re_psi, r.im_psi), true);
    }
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::analytic::{free_gaussian, sample_field};

    #[test]
    fn wave_csv_round_trip() {
        let axis = Axis::new(-2.0, 2.0, 41).unwrap();
        let time = TimeAxis::new(0.1, 0.05, 4).unwrap();
        let mut f = sample_field(axis, time, |x, t| free_gaussian(1.0, 1.0, 1.0, 0.0, 0.5, x, t));
        f.valid[5] = false;
        let mut buf = Vec::new();
        write_wave_csv(&mut buf, &f, 1).unwrap();
        let back = read_wave_csv(buf.as_slice()).unwrap();
        assert!(back.axis.same_as(&axis));
        assert!(back.time.same_as(&time));
        assert!(!back.valid[5]);
        for j in 0..f.values.len() {
            if f.valid[j] {
                assert_eq!(back.values[j], f.values[j]);
            }
        }
    }

    #[test]
    fn malformed_wave_csv_is_rejected() {
        let bad = "t,x,re_psi\n0,0,1\n";
        assert!(matches!(read_wave_csv(bad.as_bytes()), Err(Error::Parse(_))));
        let uneven = "t,x,re_psi,im_psi\n0,0,1,0\n0,1,1,0\n0,3,1,0\n1,0,1,0\n";
        assert!(matches!(read_wave_csv(uneven.as_bytes()), Err(Error::Parse(_))));
    }

    #[test]
    fn sweep_table_ends_with_orders() {
        let rows = vec![SweepRow {
            value: 1e-3,
            schrodinger_l2: Some(0.5),
            bohm_max: None,
            l2_vs_oracle: Some(2e-3),
        }];
        let mut buf = Vec::new();
        write_sweep_csv(
            &mut buf,
            &rows,
            &SweepOrders {
                schrodinger_l2: None,
                bohm_max: None,
                l2_vs_oracle: Some(1.01),
            },
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "value,schrodinger_l2,bohm_max,l2_vs_oracle");
        assert_eq!(text.lines().last().unwrap(), "fitted_order,,,1.01");
    }
}
