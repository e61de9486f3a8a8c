use crate::error::{Error, Result};

/// Useful gathered bytes over embedding-stage latency, in decimal GB/s.
pub fn effective_embedding_throughput(gathered_bytes: u64, emb_latency: f64) -> Result<f64> {
    if emb_latency.is_nan() || emb_latency <= 0.0 {
        return Err(Error::Invalid(format!("embedding latency must be positive, got {emb_latency}")));
    }
    Ok(gathered_bytes as f64 / emb_latency / 1e9)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_values() {
        // DLRM(4), B=16: 16 x 50 x 80 x 128 bytes.
        let bytes = 16 * 50 * 80 * 128;
        assert_eq!(bytes, 8_192_000);
        let gbps = effective_embedding_throughput(bytes, 6.883e-4).unwrap();
        assert_eq!(gbps, 8_192_000.0 / 6.883e-4 / 1e9);
        assert!((gbps - 11.9).abs() < 0.005);
        assert_eq!(effective_embedding_throughput(0, 3.0).unwrap(), 0.0);
        assert_eq!(effective_embedding_throughput(123_456, 1.0).unwrap(), 123_456.0 / 1e9);
        assert!(effective_embedding_throughput(1, 0.0).is_err());
    }
}
