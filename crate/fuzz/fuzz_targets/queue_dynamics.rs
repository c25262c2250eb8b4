//! Replays a byte stream as serve/arrival operations on one queue and
//! checks ordering, bounds and packet conservation after every slot.

#![no_main]
use libfuzzer_sys::fuzz_target;

use dpasim::model::UserQueue;

fuzz_target!(|data: &[u8]| {
    let Some((&first, ops)) = data.split_first() else { return };
    let deadline = u32::from(first % 16) + 1;
    let mut queue = UserQueue::new();
    let (mut arrivals, mut served, mut dropped) = (0usize, 0usize, 0usize);
    for &op in ops {
        let serve = op & 1 != 0;
        let arrival = op & 2 != 0;
        let had_packet = !queue.is_empty();
        dropped += usize::from(queue.advance(serve, arrival, deadline));
        served += usize::from(serve && had_packet);
        arrivals += usize::from(arrival);
        let d: Vec<u32> = queue.iter().collect();
        assert!(d.iter().all(|&x| (1..=deadline).contains(&x)));
        assert!(d.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(arrivals, served + dropped + queue.len());
    }
});
