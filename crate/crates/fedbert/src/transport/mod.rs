//! Federation over the wire: a checksummed frame format, weight
//! serialization, and lock-step server/client sessions, plus an in-process
//! loopback with the identical message flow.

mod session;
mod wire;

pub use session::{run_client, run_loopback, run_server, Direction, TransportError};
pub use wire::{
    decode_weights, deframe, done_payload, encode_weights, error_payload, frame, global_payload,
    join_payload, parse_done, parse_error, parse_global, parse_join, parse_update, update_payload,
    MsgType, WireError, DEFAULT_PORT, MAGIC,
};
