import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'lrdlab.settings')
django.setup()
