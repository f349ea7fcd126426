import os
import sys

odsgdlab_basedir = os.path.abspath(os.path.join(os.path.dirname(__file__), '..'))
fixtures_dir = os.path.join(os.path.dirname(__file__), 'fixtures')

sys.path.insert(0, odsgdlab_basedir)
