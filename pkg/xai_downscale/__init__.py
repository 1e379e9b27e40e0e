"""
Perfect-prognosis downscaling with convolutional networks, Integrated
Gradients saliency, and the saliency-based locality diagnostics (accumulated
saliency maps and saliency dispersion maps).

Example usage:

.. code:: python

    from xai_downscale.run import Run

    run = Run('./tests/files/run_synth.yml')
    run.execute('synth')
    run.execute('train')
    run.execute('explain')

"""

__version__ = '0.3.0'
