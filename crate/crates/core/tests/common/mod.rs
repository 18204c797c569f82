//! Helpers shared by the integration tests.

use dyncolor::ids::{EdgeKey, UpdateEvent, VertexId};
use indexmap::IndexSet;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// A churn script that is valid by construction: no loops, no duplicate
/// inserts, no deletes of absent edges, and degrees capped at `delta`.
pub fn churn_events(n: u32, delta: u32, count: usize, rng: &mut ChaCha8Rng) -> Vec<UpdateEvent> {
    let mut present: IndexSet<EdgeKey> = IndexSet::new();
    let mut degrees = vec![0u32; n as usize];
    let mut events = Vec::with_capacity(count);
    while events.len() < count {
        let insert = present.is_empty() || rng.gen_bool(0.55);
        if insert {
            let u = VertexId(rng.gen_range(0..n));
            let v = VertexId(rng.gen_range(0..n));
            if u == v || degrees[u.idx()] >= delta || degrees[v.idx()] >= delta {
                continue;
            }
            let key = EdgeKey::new(u, v);
            if !present.insert(key) {
                continue;
            }
            degrees[u.idx()] += 1;
            degrees[v.idx()] += 1;
            events.push(UpdateEvent::insert(u, v));
        } else {
            let i = rng.gen_range(0..present.len());
            let key = *present.get_index(i).expect("index in range");
            present.swap_remove(&key);
            degrees[key.0.idx()] -= 1;
            degrees[key.1.idx()] -= 1;
            events.push(UpdateEvent::delete(key.0, key.1));
        }
    }
    events
}
