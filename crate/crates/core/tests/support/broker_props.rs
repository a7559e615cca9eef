//! Randomized delivery checks against a live broker.

use std::collections::BTreeSet;
use std::time::Duration;

use portpipe_core::broker::{BrokerClient, QueueName, Subscription};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MESSAGES: u32 = 1_000;
const WAIT: Duration = Duration::from_secs(10);
const QUIET: Duration = Duration::from_millis(30);

fn payload(i: u32) -> Vec<u8> {
    i.to_be_bytes().to_vec()
}

fn seq(p: &[u8]) -> Result<u32, String> {
    p.try_into()
        .map(u32::from_be_bytes)
        .map_err(|_| format!("unexpected payload {p:?}"))
}

async fn publish_all(client: &BrokerClient, q: &QueueName, n: u32) -> Result<(), String> {
    let mut confirms = Vec::with_capacity(n as usize);
    for i in 0..n {
        confirms.push(client.publish_confirm(q, &payload(i)).map_err(|e| e.to_string())?);
    }
    for c in confirms {
        c.await.map_err(|e| e.to_string())?;
    }
    Ok(())
}

async fn next(sub: &mut Subscription) -> Result<(u64, u32), String> {
    match tokio::time::timeout(WAIT, sub.next()).await {
        Ok(Some(d)) => Ok((d.tag, seq(&d.payload)?)),
        Ok(None) => Err("subscription closed".into()),
        Err(_) => Err("timed out waiting for a delivery".into()),
    }
}

async fn assert_quiet(sub: &mut Subscription) -> Result<(), String> {
    match tokio::time::timeout(QUIET, sub.next()).await {
        Ok(Some(d)) => Err(format!("unexpected extra delivery {:?}", seq(&d.payload))),
        _ => Ok(()),
    }
}

async fn connect(addr: &str) -> Result<BrokerClient, String> {
    BrokerClient::connect(addr).await.map_err(|e| e.to_string())
}

/// One publisher, one consumer: every message exactly once, in order.
pub async fn fifo_single_consumer(addr: &str, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = QueueName::new(format!("fifo-{seed}")).unwrap();
    let publisher = connect(addr).await?;
    let consumer = connect(addr).await?;
    let mut sub = consumer
        .subscribe(&q, rng.random_range(1..=64))
        .await
        .map_err(|e| e.to_string())?;
    publish_all(&publisher, &q, MESSAGES).await?;
    for want in 0..MESSAGES {
        let (tag, got) = next(&mut sub).await?;
        if got != want {
            return Err(format!("expected message {want}, got {got}"));
        }
        consumer.ack_nowait(tag).map_err(|e| e.to_string())?;
    }
    assert_quiet(&mut sub).await?;
    publisher.close();
    consumer.close();
    Ok(())
}

/// Two consumers: each message reaches exactly one of them.
pub async fn competing_consumers(addr: &str, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = QueueName::new(format!("compete-{seed}")).unwrap();
    let publisher = connect(addr).await?;
    let a = connect(addr).await?;
    let b = connect(addr).await?;
    let mut sa = a.subscribe(&q, rng.random_range(1..=64)).await.map_err(|e| e.to_string())?;
    let mut sb = b.subscribe(&q, rng.random_range(1..=64)).await.map_err(|e| e.to_string())?;
    publish_all(&publisher, &q, MESSAGES).await?;
    let mut got_a = BTreeSet::new();
    let mut got_b = BTreeSet::new();
    while got_a.len() + got_b.len() < MESSAGES as usize {
        tokio::select! {
            d = next(&mut sa) => {
                let (tag, i) = d?;
                if !got_a.insert(i) {
                    return Err(format!("message {i} delivered twice to consumer A"));
                }
                a.ack_nowait(tag).map_err(|e| e.to_string())?;
            }
            d = next(&mut sb) => {
                let (tag, i) = d?;
                if !got_b.insert(i) {
                    return Err(format!("message {i} delivered twice to consumer B"));
                }
                b.ack_nowait(tag).map_err(|e| e.to_string())?;
            }
        }
    }
    if let Some(i) = got_a.intersection(&got_b).next() {
        return Err(format!("message {i} delivered to both consumers"));
    }
    let union: BTreeSet<u32> = got_a.union(&got_b).copied().collect();
    if union != (0..MESSAGES).collect() {
        return Err("union of deliveries differs from the published set".into());
    }
    assert_quiet(&mut sa).await?;
    assert_quiet(&mut sb).await?;
    for c in [publisher, a, b] {
        c.close();
    }
    Ok(())
}

/// A consumer dies holding unacknowledged messages; a survivor receives
/// them and nothing is lost.
pub async fn redelivery_on_disconnect(addr: &str, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = QueueName::new(format!("redeliver-{seed}")).unwrap();
    let publisher = connect(addr).await?;
    publish_all(&publisher, &q, MESSAGES).await?;

    let doomed = connect(addr).await?;
    let prefetch = rng.random_range(1..=64);
    let mut sd = doomed.subscribe(&q, prefetch).await.map_err(|e| e.to_string())?;
    let take = rng.random_range(1..=MESSAGES);
    let mut acked = BTreeSet::new();
    let mut held = BTreeSet::new();
    // Unacknowledged deliveries hold the prefetch window, so stop once it is full.
    for _ in 0..take {
        if held.len() == prefetch as usize {
            break;
        }
        let (tag, i) = next(&mut sd).await?;
        if rng.random_bool(0.5) {
            doomed.ack(tag).await.map_err(|e| e.to_string())?;
            acked.insert(i);
        } else {
            held.insert(i);
        }
    }
    doomed.close();
    drop(sd);

    let survivor = connect(addr).await?;
    let mut ss = survivor.subscribe(&q, rng.random_range(1..=64)).await.map_err(|e| e.to_string())?;
    let mut rest = BTreeSet::new();
    while acked.len() + rest.len() < MESSAGES as usize {
        let (tag, i) = next(&mut ss).await?;
        if acked.contains(&i) {
            return Err(format!("acknowledged message {i} was redelivered"));
        }
        if !rest.insert(i) {
            return Err(format!("message {i} delivered twice to the survivor"));
        }
        survivor.ack_nowait(tag).map_err(|e| e.to_string())?;
    }
    if !held.is_subset(&rest) {
        return Err("unacknowledged messages were not redelivered".into());
    }
    assert_quiet(&mut ss).await?;
    publisher.close();
    survivor.close();
    Ok(())
}
