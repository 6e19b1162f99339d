use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use super::{Backend, BackendError, ChatRequest, ChatResponse};

/// Bounds concurrent requests and spaces request starts to respect a
/// per-minute budget. Shared by every caller of one backend instance.
#[derive(Debug)]
pub struct AdmissionGate {
    max_in_flight: usize,
    min_interval: Option<Duration>,
    state: Mutex<GateState>,
    freed: Condvar,
}

#[derive(Debug)]
struct GateState {
    in_flight: usize,
    next_start: Option<Instant>,
}

/// Releases the slot on drop.
pub struct Permit<'a> {
    gate: &'a AdmissionGate,
}

impl AdmissionGate {
    pub fn new(max_in_flight: usize, requests_per_minute: Option<u32>) -> Self {
        AdmissionGate {
            max_in_flight: max_in_flight.max(1),
            min_interval: requests_per_minute.filter(|&r| r > 0).map(|r| Duration::from_secs_f64(60.0 / f64::from(r))),
            state: Mutex::new(GateState { in_flight: 0, next_start: None }),
            freed: Condvar::new(),
        }
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut state = self.state.lock().unwrap();
        while state.in_flight >= self.max_in_flight {
            state = self.freed.wait(state).unwrap();
        }
        state.in_flight += 1;
        let wait = match self.min_interval {
            Some(interval) => {
                let now = Instant::now();
                let start = state.next_start.map_or(now, |t| t.max(now));
                state.next_start = Some(start + interval);
                start.saturating_duration_since(now)
            }
            None => Duration::ZERO,
        };
        drop(state);
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
        Permit { gate: self }
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut state = self.gate.state.lock().unwrap();
        state.in_flight -= 1;
        drop(state);
        self.gate.freed.notify_one();
    }
}

/// Applies an [`AdmissionGate`] to any backend.
pub struct Gated<B> {
    inner: B,
    gate: AdmissionGate,
}

impl<B: Backend> Gated<B> {
    pub fn new(inner: B, max_in_flight: usize, requests_per_minute: Option<u32>) -> Self {
        Gated { inner, gate: AdmissionGate::new(max_in_flight, requests_per_minute) }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: Backend> Backend for Gated<B> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let _permit = self.gate.acquire();
        self.inner.complete(request)
    }
}
