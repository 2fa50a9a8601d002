"""NMSE vs SNR for n_t in {96, 192, 387} at f_d = 200 Hz, 20 subchannels."""
from _sweep import main

if __name__ == "__main__":
    main("fig1", "n_t", __doc__)
