//! Single-slot, newest-wins hand-pose mailbox and the pending-config cell.

use std::sync::Mutex;
use std::time::Instant;

use hri_shield::barrier::Method;
use nalgebra::Vector3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandSample {
    pub client_t: f64,
    pub position: Vector3<f64>,
    pub received: Instant,
}

#[derive(Debug, Default)]
pub struct Mailbox {
    slot: Mutex<Option<HandSample>>,
}

impl Mailbox {
    /// Replaces any unread sample.
    pub fn put(&self, s: HandSample) {
        *self.slot.lock().expect("mailbox poisoned") = Some(s);
    }

    pub fn take(&self) -> Option<HandSample> {
        self.slot.lock().expect("mailbox poisoned").take()
    }
}

/// Partial safety update; later fields override earlier ones until the loop
/// consumes it.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ConfigChange {
    pub method: Option<Method>,
    pub gamma: Option<f64>,
}

#[derive(Debug, Default)]
pub struct ConfigCell {
    pending: Mutex<Option<ConfigChange>>,
}

impl ConfigCell {
    pub fn merge(&self, change: ConfigChange) {
        let mut p = self.pending.lock().expect("config cell poisoned");
        let cur = p.get_or_insert_with(ConfigChange::default);
        if change.method.is_some() {
            cur.method = change.method;
        }
        if change.gamma.is_some() {
            cur.gamma = change.gamma;
        }
    }

    pub fn take(&self) -> Option<ConfigChange> {
        self.pending.lock().expect("config cell poisoned").take()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(t: f64) -> HandSample {
        HandSample { client_t: t, position: Vector3::new(t, 0.0, 0.0), received: Instant::now() }
    }

    #[test]
    fn burst_delivers_only_the_newest() {
        let mb = Mailbox::default();
        for i in 0..10 {
            mb.put(sample(i as f64));
        }
        assert_eq!(mb.take().unwrap().client_t, 9.0);
        assert!(mb.take().is_none());
    }

    #[test]
    fn config_changes_merge_fieldwise() {
        let cell = ConfigCell::default();
        cell.merge(ConfigChange { method: Some(Method::Pcbf), gamma: None });
        cell.merge(ConfigChange { method: None, gamma: Some(2.5) });
        assert_eq!(cell.take(), Some(ConfigChange { method: Some(Method::Pcbf), gamma: Some(2.5) }));
        assert_eq!(cell.take(), None);
    }
}
