//! Plumbing shared by the HTTP services.

use std::net::SocketAddr;

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

/// Base URL advertised in TD forms; wildcard binds advertise `localhost`.
pub fn advertised_base(addr: SocketAddr) -> String {
    let host = if addr.ip().is_unspecified() {
        "localhost".to_string()
    } else {
        addr.ip().to_string()
    };
    format!("http://{host}:{}", addr.port())
}

pub(crate) fn json_error(status: StatusCode, msg: impl ToString) -> Response {
    (status, Json(json!({ "error": msg.to_string() }))).into_response()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn advertised_base_replaces_wildcards() {
        assert_eq!(advertised_base("0.0.0.0:8081".parse().unwrap()), "http://localhost:8081");
        assert_eq!(advertised_base("127.0.0.1:9".parse().unwrap()), "http://127.0.0.1:9");
    }
}
