"""NMSE vs SNR for 10, 20 and 30 subchannels at n_t = 192, f_d = 200 Hz."""
from _sweep import main

if __name__ == "__main__":
    main("fig3", "n_sch", __doc__)
