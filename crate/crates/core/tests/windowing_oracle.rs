mod support;

use support::oracle::{check_trace, gen_trace, sliding, tumbling, Ev, Row};

const SEC: i64 = 1_000_000_000;

#[test]
fn oracle_sanity() {
    let evs = [
        Ev { ts: 0, station: 1, pm10: 10 },
        Ev { ts: SEC, station: 2, pm10: 5 },
        Ev { ts: 2 * SEC, station: 1, pm10: 20 },
        Ev { ts: 3 * SEC, station: 1, pm10: 30 },
    ];
    let rows = tumbling(&evs, 0, 3600 * SEC, 3600 * SEC);
    assert_eq!(
        rows,
        vec![
            Row { ts: 3600 * SEC, station: 1, value: 20.0, total: 3 },
            Row { ts: 3600 * SEC, station: 2, value: 5.0, total: 1 },
        ]
    );
    let slid = sliding(
        &[
            Row { ts: 0, station: 1, value: 10.0, total: 0 },
            Row { ts: 5, station: 1, value: 30.0, total: 0 },
            Row { ts: 11, station: 1, value: 50.0, total: 0 },
        ],
        10,
        false,
    );
    let values: Vec<f64> = slid.iter().map(|r| r.value).collect();
    assert_eq!(values, vec![10.0, 20.0, 40.0]);
}

#[test]
fn engine_matches_oracle_on_random_traces() {
    let mut rows = 0;
    for seed in 0..60 {
        let t = gen_trace(seed, 3_000);
        rows += check_trace(&t, 1e-9).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
    }
    assert!(rows > 1_000);
}
