//! Holds the acceptance run (`tests/acceptance.rs`) and the ignored oracle
//! that computes the frozen constants (`tests/frozen_oracle.rs`).
