"""Mel-domain speech enhancement: DSP front end, selective state-space
network, training loop, and streaming inference.

Subpackage layout:
    audio        WAV reading/writing at the fixed 16 kHz project rate
    dsp          STFT analysis/synthesis, mel filterbank, logmel and masks
    normalize    offline dBFS gain and online recursive magnitude norm
    synth        noisy/clean pair synthesis (speech, RIR, noise generators)
    autodiff     minimal reverse-mode tensor library (float32, <= 4 dims)
    kernels      selective-scan recurrence kernels (numba lane + numpy lane)
    layers       network building blocks on top of autodiff
    model        full enhancement model, config, checkpoint format
    train        losses, AdamW, schedule, checkpoint averaging
    stream       frame-synchronous online inference sessions
    reconstruct  waveform synthesis from enhanced logmel
    metrics      logmel MAE, log-spectral distance, SI-SDR
    viz          grayscale spectrogram PNG rendering
    cli          command line entry point
"""

__version__ = "0.1.0"
