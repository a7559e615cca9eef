mod support;

use portpipe_core::broker::{BrokerConfig, BrokerServer};
use support::broker_props::{competing_consumers, fifo_single_consumer, redelivery_on_disconnect};

const REPS: u64 = 10;

#[tokio::test]
async fn delivery_properties_hold() {
    let broker = BrokerServer::bind("127.0.0.1:0", BrokerConfig::default())
        .await
        .unwrap()
        .spawn()
        .unwrap();
    let addr = broker.addr.to_string();
    for seed in 0..REPS {
        fifo_single_consumer(&addr, seed).await.unwrap();
        competing_consumers(&addr, seed).await.unwrap();
        redelivery_on_disconnect(&addr, seed).await.unwrap();
    }
    broker.shutdown().await;
}
