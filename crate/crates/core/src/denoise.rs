//! Background-activity removal by per-pixel inter-event gaps.
//!
//! Each event is compared against the previous and next event at the same
//! pixel, over the whole stream:
//!
//! * trailing (TE) if the backward gap is `< tau`,
//! * otherwise inceptive (IE) if the forward gap is `< tau`,
//! * otherwise background activity (BA).
//!
//! A missing neighbour (first or last event at a pixel) counts as an
//! infinite gap. An event that is close to its predecessor but isolated
//! going forward is still TE; only the backward gap decides TE.

use std::fmt::Write as _;

use crate::event::{Event, EventStream, EventWindow, Micros};
use crate::error::{Error, Result};

pub const DEFAULT_TAU_US: Micros = 5_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NoiseClass {
    Background,
    Inceptive,
    Trailing,
}

impl NoiseClass {
    pub fn label(self) -> &'static str {
        match self {
            NoiseClass::Background => "BA",
            NoiseClass::Inceptive => "IE",
            NoiseClass::Trailing => "TE",
        }
    }

    pub fn is_signal(self) -> bool {
        self != NoiseClass::Background
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DenoiseConfig {
    pub tau: Micros,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        Self { tau: DEFAULT_TAU_US }
    }
}

impl DenoiseConfig {
    pub fn new(tau: Micros) -> Result<Self> {
        if tau <= 0 {
            return Err(Error::InvalidConfig(format!("tau must be positive, got {tau}")));
        }
        Ok(Self { tau })
    }
}

#[inline]
fn class_from_gaps(back: Option<Micros>, forward: Option<Micros>, tau: Micros) -> NoiseClass {
    if back.is_some_and(|g| g < tau) {
        NoiseClass::Trailing
    } else if forward.is_some_and(|g| g < tau) {
        NoiseClass::Inceptive
    } else {
        NoiseClass::Background
    }
}

/// Classifies a time-ordered slice of events, returning one class per event.
///
/// Events are only compared with other events in `events`, so a slice
/// classifies like the full stream as long as it extends at least `tau`
/// beyond the events whose class is needed.
pub fn classify_events(events: &[Event], width: usize, height: usize, tau: Micros) -> Vec<NoiseClass> {
    let n = events.len();
    let mut back = vec![None; n];
    let mut forward = vec![None; n];
    let mut last_seen: Vec<Option<usize>> = vec![None; width * height];
    for (i, e) in events.iter().enumerate() {
        let idx = e.pixel().index(width);
        if let Some(j) = last_seen[idx] {
            let gap = e.t - events[j].t;
            back[i] = Some(gap);
            forward[j] = Some(gap);
        }
        last_seen[idx] = Some(i);
    }
    (0..n)
        .map(|i| class_from_gaps(back[i], forward[i], tau))
        .collect()
}

/// Labels every event in the stream.
pub fn classify(stream: &EventStream, cfg: &DenoiseConfig) -> Vec<(Event, NoiseClass)> {
    let g = stream.geometry();
    let classes = classify_events(stream.events(), g.width as usize, g.height as usize, cfg.tau);
    stream.events().iter().copied().zip(classes).collect()
}

/// The window `[t_eval - delta_t, t_eval)` restricted to IE and TE events.
///
/// Only events within `tau` of the window can change the class of an
/// in-window event, so classification runs on that margin-extended slice.
pub fn denoised_window(
    stream: &EventStream,
    t_eval: Micros,
    delta_t: Micros,
    cfg: &DenoiseConfig,
) -> EventWindow {
    assert!(delta_t > 0, "window length must be positive");
    let start = t_eval - delta_t;
    let slice = stream.slice(start - cfg.tau, t_eval + cfg.tau);
    let g = stream.geometry();
    let classes = classify_events(slice, g.width as usize, g.height as usize, cfg.tau);
    EventWindow::from_events(
        slice
            .iter()
            .zip(&classes)
            .filter(|(e, c)| e.t >= start && e.t < t_eval && c.is_signal())
            .map(|(e, _)| e),
        t_eval,
        delta_t,
    )
}

/// `t,x,y,p,class` lines for debugging.
pub fn classified_csv(labelled: &[(Event, NoiseClass)]) -> String {
    let mut out = String::with_capacity(labelled.len() * 24);
    for (e, c) in labelled {
        let _ = writeln!(out, "{},{},{},{},{}", e.t, e.x, e.y, e.p.sign(), c.label());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{Polarity, SensorGeometry};

    fn stream_at_pixel(times: &[Micros]) -> EventStream {
        let ev = times
            .iter()
            .map(|&t| Event::new(t, 3, 4, Polarity::Positive))
            .collect();
        EventStream::new(ev, SensorGeometry::new(8, 8)).unwrap()
    }

    fn classes(times: &[Micros], tau: Micros) -> Vec<NoiseClass> {
        classify(&stream_at_pixel(times), &DenoiseConfig::new(tau).unwrap())
            .into_iter()
            .map(|(_, c)| c)
            .collect()
    }

    use NoiseClass::*;

    #[test]
    fn lone_event_is_background() {
        assert_eq!(classes(&[100], 5000), vec![Background]);
    }

    #[test]
    fn burst_is_inceptive_then_trailing() {
        assert_eq!(classes(&[0, 1000, 2000], 5000), vec![Inceptive, Trailing, Trailing]);
    }

    #[test]
    fn widely_spaced_events_are_background() {
        assert_eq!(classes(&[0, 10_000], 5000), vec![Background, Background]);
    }

    #[test]
    fn gap_equal_to_tau_is_not_close() {
        assert_eq!(classes(&[0, 5000], 5000), vec![Background, Background]);
    }

    #[test]
    fn trailing_ignores_forward_gap() {
        assert_eq!(classes(&[0, 1000, 50_000], 5000), vec![Inceptive, Trailing, Background]);
    }

    #[test]
    fn pixels_are_independent() {
        let ev = vec![
            Event::new(0, 0, 0, Polarity::Positive),
            Event::new(100, 1, 0, Polarity::Positive),
        ];
        let s = EventStream::new(ev, SensorGeometry::new(4, 4)).unwrap();
        let c: Vec<_> = classify(&s, &DenoiseConfig::default()).into_iter().map(|x| x.1).collect();
        assert_eq!(c, vec![Background, Background]);
    }

    #[test]
    fn isolated_events_give_empty_window() {
        let ev = vec![
            Event::new(1000, 0, 0, Polarity::Positive),
            Event::new(2000, 5, 5, Polarity::Negative),
        ];
        let s = EventStream::new(ev, SensorGeometry::new(8, 8)).unwrap();
        assert!(denoised_window(&s, 5000, 5000, &DenoiseConfig::default()).is_empty());
        assert_eq!(s.window_at(5000, 5000).len(), 2);
    }

    #[test]
    fn classification_uses_neighbours_outside_window() {
        // the in-window event is the tail of a burst that started earlier
        let s = stream_at_pixel(&[3500, 6000]);
        let w = denoised_window(&s, 10_000, 4000, &DenoiseConfig::default());
        assert!(w.contains(&crate::event::Pixel::new(3, 4)));
    }

    #[test]
    fn dense_burst_window_matches_raw_window() {
        let s = stream_at_pixel(&[100, 200, 300, 400]);
        let cfg = DenoiseConfig::default();
        assert_eq!(
            denoised_window(&s, 5000, 5000, &cfg).pixels().collect::<Vec<_>>(),
            s.window_at(5000, 5000).pixels().collect::<Vec<_>>()
        );
    }

    #[test]
    fn rejects_nonpositive_tau() {
        assert!(DenoiseConfig::new(0).is_err());
    }
}
