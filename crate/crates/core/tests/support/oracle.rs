//! Brute-force reference for the context snapshot and sliding-window
//! selects. Means are recomputed from explicit event lists on every row.

use std::collections::BTreeMap;

use portpipe_core::epl::{ComplexEvent, Engine};
use portpipe_core::{EventRecord, Value};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEC: i64 = 1_000_000_000;

#[derive(Debug, Clone, Copy)]
pub struct Ev {
    pub ts: i64,
    pub station: i64,
    pub pm10: i64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Row {
    pub ts: i64,
    pub station: i64,
    pub value: f64,
    pub total: i64,
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub start: i64,
    pub context_s: u64,
    pub batch_window_s: u64,
    pub raw_window_s: u64,
    pub events: Vec<Ev>,
}

/// Random trace: duplicate timestamps, dense bursts and gaps that skip
/// whole intervals all occur.
pub fn gen_trace(seed: u64, max_events: usize) -> Trace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=max_events);
    let stations = rng.random_range(1..=5i64);
    let context_s = rng.random_range(1..=60u64);
    let batch_window_s = rng.random_range(1..=10u64) * context_s;
    let raw_window_s = rng.random_range(1..=30u64);
    let start = rng.random_range(0..1_000i64) * SEC;
    let mut ts = start;
    let mut events = Vec::with_capacity(n);
    for _ in 0..n {
        let roll: f64 = rng.random();
        ts += if roll < 0.1 {
            0
        } else if roll < 0.98 {
            rng.random_range(1..=SEC / 2)
        } else {
            rng.random_range(1..=5 * context_s as i64) * SEC
        };
        events.push(Ev {
            ts,
            station: rng.random_range(1..=stations),
            pm10: rng.random_range(-50..=500),
        });
    }
    Trace {
        start,
        context_s,
        batch_window_s,
        raw_window_s,
        events,
    }
}

/// Back-to-back intervals from `start`; one row per station seen in an
/// interval, emitted at the interval end, for intervals ending by `until`.
pub fn tumbling(events: &[Ev], start: i64, dur: i64, until: i64) -> Vec<Row> {
    let mut intervals: BTreeMap<i64, Vec<&Ev>> = BTreeMap::new();
    for e in events {
        intervals.entry((e.ts - start) / dur).or_default().push(e);
    }
    let mut rows = Vec::new();
    for (k, evs) in intervals {
        let end = start + (k + 1) * dur;
        if end > until {
            continue;
        }
        let mut order: Vec<i64> = Vec::new();
        for e in &evs {
            if !order.contains(&e.station) {
                order.push(e.station);
            }
        }
        for s in order {
            let vals: Vec<i64> = evs.iter().filter(|e| e.station == s).map(|e| e.pm10).collect();
            let sum: f64 = vals.iter().map(|v| *v as f64).sum();
            rows.push(Row {
                ts: end,
                station: s,
                value: sum / vals.len() as f64,
                total: vals.len() as i64,
            });
        }
    }
    rows
}

/// Sliding window: on each arrival, the mean of the same station's
/// arrivals no older than `dur`. `total` comes from the arriving row when
/// `last_total` is set, otherwise it is the window count.
pub fn sliding(inputs: &[Row], dur: i64, last_total: bool) -> Vec<Row> {
    let mut rows = Vec::with_capacity(inputs.len());
    for (i, cur) in inputs.iter().enumerate() {
        let mut sum = 0.0;
        let mut n = 0i64;
        for prev in inputs[..=i].iter().rev() {
            if prev.ts < cur.ts - dur {
                break;
            }
            if prev.station == cur.station {
                sum += prev.value;
                n += 1;
            }
        }
        rows.push(Row {
            ts: cur.ts,
            station: cur.station,
            value: sum / n as f64,
            total: if last_total { cur.total } else { n },
        });
    }
    rows
}

pub fn statements(t: &Trace) -> Vec<String> {
    vec![
        "@public @buseventtype create schema AirQualityMeasurement as (PM10 integer, PM25 Double, stationId integer)".into(),
        format!("@public create context Ctx start @now end after {} sec", t.context_s),
        "context Ctx insert into Batch select a1.stationId as stationId, avg(a1.PM10) as Value, count(*) as Total \
         from AirQualityMeasurement a1 group by a1.stationId output snapshot when terminated"
            .into(),
        format!(
            "insert into Slide select a1.stationId as stationId, avg(a1.Value) as Value, a1.Total as Total \
             from Batch#time({} sec) a1 group by a1.stationId",
            t.batch_window_s
        ),
        format!(
            "insert into RawSlide select stationId, avg(PM10) as Value, count(*) as Total \
             from AirQualityMeasurement#time({} sec) group by stationId",
            t.raw_window_s
        ),
    ]
}

fn to_row(c: &ComplexEvent) -> Row {
    let int = |k: &str| match c.values[k] {
        Value::Integer(i) => i,
        ref other => panic!("{k} is {other:?}"),
    };
    let Value::Double(value) = c.values["Value"] else {
        panic!("Value is not a double")
    };
    Row {
        ts: c.detect_ts,
        station: int("stationId"),
        value,
        total: int("Total"),
    }
}

pub struct Outputs {
    pub batch: Vec<Row>,
    pub slide: Vec<Row>,
    pub raw_slide: Vec<Row>,
}

pub fn run_engine(t: &Trace) -> Outputs {
    let mut engine = Engine::new();
    for s in statements(t) {
        engine.deploy_text(&s).unwrap();
    }
    let mut all = engine.advance_time(t.start).unwrap();
    for e in &t.events {
        let rec = EventRecord::new(
            "AirQualityMeasurement",
            BTreeMap::from([
                ("PM10".to_string(), Value::Integer(e.pm10)),
                ("PM25".to_string(), Value::Double(0.5)),
                ("stationId".to_string(), Value::Integer(e.station)),
            ]),
        );
        all.extend(engine.on_event(&rec, e.ts).unwrap());
    }
    all.extend(engine.advance_time(until(t)).unwrap());
    let pick = |name: &str| all.iter().filter(|c| c.stream_name == name).map(to_row).collect();
    Outputs {
        batch: pick("Batch"),
        slide: pick("Slide"),
        raw_slide: pick("RawSlide"),
    }
}

fn until(t: &Trace) -> i64 {
    t.events.last().map_or(t.start, |e| e.ts) + t.context_s as i64 * SEC
}

pub fn run_oracle(t: &Trace) -> Outputs {
    let batch = tumbling(&t.events, t.start, t.context_s as i64 * SEC, until(t));
    let slide = sliding(&batch, t.batch_window_s as i64 * SEC, true);
    let raw: Vec<Row> = t
        .events
        .iter()
        .map(|e| Row {
            ts: e.ts,
            station: e.station,
            value: e.pm10 as f64,
            total: 0,
        })
        .collect();
    let raw_slide = sliding(&raw, t.raw_window_s as i64 * SEC, false);
    Outputs {
        batch,
        slide,
        raw_slide,
    }
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    a == b || (a - b).abs() <= rel * a.abs().max(b.abs())
}

/// Row multisets must match; values within `rel` relative tolerance.
pub fn same_rows(mut got: Vec<Row>, mut want: Vec<Row>, rel: f64) -> Result<(), String> {
    if got.len() != want.len() {
        return Err(format!("{} rows, oracle has {}", got.len(), want.len()));
    }
    let key = |r: &Row| (r.ts, r.station, r.total);
    let order = |a: &Row, b: &Row| key(a).cmp(&key(b)).then(a.value.total_cmp(&b.value));
    got.sort_by(order);
    want.sort_by(order);
    for (g, w) in got.iter().zip(&want) {
        if key(g) != key(w) || !close(g.value, w.value, rel) {
            return Err(format!("row {g:?} differs from oracle {w:?}"));
        }
    }
    Ok(())
}

/// Checks one trace; returns the number of rows compared.
pub fn check_trace(t: &Trace, rel: f64) -> Result<usize, String> {
    let got = run_engine(t);
    let want = run_oracle(t);
    let n = want.batch.len() + want.slide.len() + want.raw_slide.len();
    same_rows(got.batch, want.batch, rel).map_err(|e| format!("batch: {e}"))?;
    same_rows(got.slide, want.slide, rel).map_err(|e| format!("slide: {e}"))?;
    same_rows(got.raw_slide, want.raw_slide, rel).map_err(|e| format!("raw slide: {e}"))?;
    Ok(n)
}
